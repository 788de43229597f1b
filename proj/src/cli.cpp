// SPDX-License-Identifier: Apache-2.0

#include "prefixbridge/cli.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "prefixbridge/checkpoint.hpp"
#include "prefixbridge/corpus.hpp"
#include "prefixbridge/metrics.hpp"
#include "prefixbridge/synth.hpp"

namespace fs = std::filesystem;

namespace pfx {

namespace {

Json synth_json(const SynthSettings& s) {
    return {{"seed", s.seed},       {"k", s.k},         {"noise_sigma", s.noise_sigma}, {"max_findings", s.max_findings},
            {"n_train", s.n_train}, {"n_val", s.n_val}, {"n_test", s.n_test}};
}

void synth_from_json(const Json& j, SynthSettings& s) {
    JsonFields f(j, "synth");
    f.read("seed", s.seed);
    f.read("k", s.k);
    f.read("noise_sigma", s.noise_sigma);
    f.read("max_findings", s.max_findings);
    f.read("n_train", s.n_train);
    f.read("n_val", s.n_val);
    f.read("n_test", s.n_test);
    f.finish();
}

Json paths_json(const RunPaths& p) {
    return {{"data", p.data}, {"lm", p.lm}, {"ckpt", p.ckpt}, {"input", p.input}, {"out", p.out}};
}

void paths_from_json(const Json& j, RunPaths& p) {
    JsonFields f(j, "paths");
    f.read("data", p.data);
    f.read("lm", p.lm);
    f.read("ckpt", p.ckpt);
    f.read("input", p.input);
    f.read("out", p.out);
    f.finish();
}

const std::vector<std::string>& section_names() {
    static const std::vector<std::string> names = {"lm", "pretrain", "mapper", "train", "synth", "decode", "paths"};
    return names;
}

void apply_override(Json& root, std::string_view text) {
    const auto eq = text.find('=');
    const auto dot = text.find('.');
    if (eq == std::string_view::npos || dot == std::string_view::npos || dot > eq || dot == 0 || dot + 1 == eq) {
        throw ConfigError("override '" + std::string(text) + "' is not of the form section.key=value");
    }
    const std::string section(text.substr(0, dot));
    const std::string key(text.substr(dot + 1, eq - dot - 1));
    const std::string value(text.substr(eq + 1));
    if (std::find(section_names().begin(), section_names().end(), section) == section_names().end()) {
        throw ConfigError("unknown config section '" + section + "' in override '" + std::string(text) + "'");
    }
    Json parsed = value;
    if (section != "paths") {
        try {
            parsed = Json::parse(value);
        } catch (const nlohmann::json::exception&) {
            parsed = value;
        }
    }
    if (!root.contains(section)) {
        root[section] = Json::object();
    }
    if (!root[section].is_object()) {
        throw ConfigError("config section '" + section + "' must be a JSON object");
    }
    root[section][key] = std::move(parsed);
}

// ---------------------------------------------------------------------------

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw InvalidInputError("cannot write " + path.string());
    }
    out << text;
}

fs::path require_path(const std::string& value, const char* key) {
    if (value.empty()) {
        throw ConfigError(std::string("missing required path 'paths.") + key + "'");
    }
    fs::path p(value);
    if (!fs::exists(p)) {
        throw InvalidInputError(std::string("paths.") + key + ": '" + value + "' does not exist");
    }
    return p;
}

fs::path output_dir(const RunConfig& config) {
    if (config.paths.out.empty()) {
        throw ConfigError("missing required path 'paths.out'");
    }
    fs::path dir(config.paths.out);
    fs::create_directories(dir);
    return dir;
}

/// A checkpoint argument may name the file itself or a directory holding it.
fs::path resolve_checkpoint(const fs::path& p, const char* default_name) {
    if (fs::is_directory(p)) {
        return p / default_name;
    }
    return p;
}

void write_run_record(const fs::path& dir, const std::string& command, const RunConfig& config, std::uint64_t seed) {
    const Json cfg = to_json(config);
    const std::string dumped = cfg.dump();
    char hash[17];
    std::snprintf(hash, sizeof(hash), "%016llx", static_cast<unsigned long long>(fnv1a64(dumped)));
    nlohmann::ordered_json record;
    record["command"] = command;
    record["config_hash"] = std::string("fnv1a64:") + hash;
    record["seed"] = seed;
    record["versions"] = {{"prefixbridge", kVersion},
                          {"checkpoint_format", kCheckpointVersion},
                          {"compiler", __VERSION__},
                          {"cxx_standard", static_cast<long>(__cplusplus)}};
    record["config"] = nlohmann::ordered_json::parse(dumped);
    write_text(dir / "run.json", record.dump(2) + "\n");
}

std::string loss_csv(std::span<const double> losses) {
    std::string out = "epoch,train_loss\n";
    char buf[64];
    for (std::size_t i = 0; i < losses.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%zu,%.6f\n", i + 1, losses[i]);
        out += buf;
    }
    return out;
}

// ---------------------------------------------------------------------------

int cmd_synth(const RunConfig& config, std::ostream& out) {
    const fs::path dir = output_dir(config);
    SynthConfig sc{gen_basis(config.synth.seed, config.synth.k, config.mapper.clip_dim), config.synth.noise_sigma,
                   config.synth.max_findings};
    sc.validate();
    const SplitSet split = gen_split(config.synth.n_train, config.synth.n_val, config.synth.n_test, sc, config.synth.seed);
    save_dataset(split, dir);
    write_run_record(dir, "synth", config, config.synth.seed);
    out << "synth: wrote " << split.train.size() << "/" << split.val.size() << "/" << split.test.size()
        << " records to " << dir.string() << "\n";
    return kExitOk;
}

int cmd_pretrain(const RunConfig& config, std::ostream& out) {
    const fs::path data = require_path(config.paths.data, "data");
    const fs::path dir = output_dir(config);
    const SplitSet split = load_dataset(data, config.mapper.clip_dim);
    std::vector<std::string> reports;
    reports.reserve(split.train.size());
    for (const auto& r : split.train) {
        reports.push_back(preprocess_report(r.report));
    }
    Vocabulary vocab = build_vocab(reports);
    LMConfig lm = config.lm;
    if (lm.vocab_size != 0 && lm.vocab_size != vocab.size()) {
        throw ConfigError("lm.vocab_size is " + std::to_string(lm.vocab_size) + " but the training corpus has " +
                          std::to_string(vocab.size()) + " tokens");
    }
    lm.vocab_size = vocab.size();
    lm.validate();
    PretrainResult result = lm_pretrain(reports, vocab, lm, config.pretrain);
    Checkpoint ckpt{lm, std::nullopt, std::nullopt, std::move(vocab), std::move(result.params)};
    save_checkpoint(ckpt, dir / "lm.ckpt");
    write_text(dir / "pretrain.csv", loss_csv(result.epoch_losses));
    write_run_record(dir, "pretrain-lm", config, config.pretrain.seed);
    char buf[128];
    std::snprintf(buf, sizeof(buf), "pretrain-lm: final loss %.6f\n", result.final_loss);
    out << buf;
    return kExitOk;
}

int cmd_train(const RunConfig& config, std::ostream& out) {
    const fs::path data = require_path(config.paths.data, "data");
    const fs::path lm_path = resolve_checkpoint(require_path(config.paths.lm, "lm"), "lm.ckpt");
    const fs::path dir = output_dir(config);
    Checkpoint start = load_checkpoint(lm_path);
    if (config.mapper.d_model != start.lm.d_model) {
        throw ConfigError("mapper.d_model is " + std::to_string(config.mapper.d_model) +
                          " but the language model has d_model " + std::to_string(start.lm.d_model));
    }
    if (start.mapper && *start.mapper != config.mapper) {
        throw ConfigError("mapper config differs from the one stored in " + lm_path.string());
    }
    start.mapper = config.mapper;
    const SplitSet split = load_dataset(data, config.mapper.clip_dim);
    TrainResult result = train(split, std::move(start), config.train);
    save_checkpoint(result.model, dir / "model.ckpt");
    write_text(dir / "metrics.csv", metrics_csv(result.log));
    write_run_record(dir, "train", config, config.train.seed);
    out << "train: " << to_string(config.train.mode) << ", "
        << trainable_param_count(result.model, config.train.mode) << " trainable parameters\n";
    return kExitOk;
}

Checkpoint load_model(const RunConfig& config) {
    const fs::path path = resolve_checkpoint(require_path(config.paths.ckpt, "ckpt"), "model.ckpt");
    Checkpoint model = load_checkpoint(path);
    if (!model.mapper) {
        throw InvalidInputError(path.string() + " has no mapping network; run train first");
    }
    return model;
}

int cmd_generate(const RunConfig& config, std::ostream& out) {
    const fs::path input = require_path(config.paths.input, "input");
    Checkpoint model = load_model(config);
    const fs::path dir = output_dir(config);
    const auto records = read_records(input, model.mapper->clip_dim, /*require_report=*/false);
    std::ofstream file(dir / "reports.jsonl", std::ios::binary | std::ios::trunc);
    if (!file) {
        throw InvalidInputError("cannot write " + (dir / "reports.jsonl").string());
    }
    for (const auto& r : records) {
        const auto result = generate_report(model, r.embedding, config.decode);
        nlohmann::ordered_json j;
        j["id"] = r.id;
        j["report"] = result.text;
        file << j.dump() << '\n';
    }
    write_run_record(dir, "generate", config, model.train ? model.train->seed : 0);
    out << "generate: " << records.size() << " reports\n";
    return kExitOk;
}

int cmd_evaluate(const RunConfig& config, std::ostream& out) {
    const fs::path data = require_path(config.paths.data, "data");
    Checkpoint model = load_model(config);
    const fs::path dir = output_dir(config);
    const SplitSet split = load_dataset(data, model.mapper->clip_dim);
    if (split.test.empty()) {
        throw InvalidInputError(data.string() + " has no test split");
    }
    const Evaluation eval = evaluate_split(model, split.test, config.decode);
    write_text(dir / "bleu.csv", bleu_csv(eval.bleu));
    write_hypotheses_jsonl(eval.outputs, dir / "hypotheses.jsonl");
    write_run_record(dir, "evaluate", config, model.train ? model.train->seed : 0);
    out << "evaluate: BLEU-1 " << format_score(eval.bleu.bleu[0]) << " BLEU-4 " << format_score(eval.bleu.bleu[3])
        << "\n";
    return kExitOk;
}

struct Subcommand {
    const char* name;
    const char* help;
    /// (flag, config key) pairs.
    std::vector<std::pair<const char*, const char*>> flags;
    std::function<int(const RunConfig&, std::ostream&)> body;
};

std::vector<Subcommand> subcommands() {
    return {
        {"synth",
         "Generate a synthetic embedding/report dataset",
         {{"--out", "paths.out"},
          {"--seed", "synth.seed"},
          {"--train", "synth.n_train"},
          {"--val", "synth.n_val"},
          {"--test", "synth.n_test"}},
         cmd_synth},
        {"pretrain-lm",
         "Pretrain the language model on the training reports",
         {{"--data", "paths.data"}, {"--out", "paths.out"}, {"--epochs", "pretrain.epochs"}},
         cmd_pretrain},
        {"train",
         "Train the mapping network (and optionally the language model)",
         {{"--data", "paths.data"}, {"--lm", "paths.lm"}, {"--out", "paths.out"}, {"--mode", "train.mode"}},
         cmd_train},
        {"generate",
         "Generate reports for an embeddings file",
         {{"--ckpt", "paths.ckpt"},
          {"--in", "paths.input"},
          {"--out", "paths.out"},
          {"--beam", "decode.beam"},
          {"--max-len", "decode.max_len"}},
         cmd_generate},
        {"evaluate",
         "Score the test split with corpus BLEU",
         {{"--ckpt", "paths.ckpt"}, {"--data", "paths.data"}, {"--out", "paths.out"}},
         cmd_evaluate},
    };
}

/// Turns CLI11's leftover arguments into "section.key=value" strings.
std::vector<std::string> dotted_overrides(const std::vector<std::string>& extras) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < extras.size(); ++i) {
        const std::string& a = extras[i];
        if (a.rfind("--", 0) != 0 || a.find('.') == std::string::npos) {
            throw CLI::ExtrasError({a});
        }
        std::string body = a.substr(2);
        if (body.find('=') == std::string::npos) {
            if (i + 1 >= extras.size()) {
                throw CLI::ArgumentMismatch(a + " requires a value");
            }
            body += "=" + extras[++i];
        }
        out.push_back(std::move(body));
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------

Json to_json(const RunConfig& c) {
    Json j;
    j["lm"] = to_json(c.lm);
    j["pretrain"] = to_json(c.pretrain);
    j["mapper"] = to_json(c.mapper);
    j["train"] = to_json(c.train);
    j["synth"] = synth_json(c.synth);
    j["decode"] = to_json(c.decode);
    j["paths"] = paths_json(c.paths);
    return j;
}

RunConfig run_config_from_json(const Json& j) {
    if (!j.is_object()) {
        throw ConfigError("config root must be a JSON object");
    }
    RunConfig c;
    for (const auto& [key, value] : j.items()) {
        if (key == "lm") {
            from_json(value, "lm", c.lm);
        } else if (key == "pretrain") {
            from_json(value, "pretrain", c.pretrain);
        } else if (key == "mapper") {
            from_json(value, "mapper", c.mapper);
        } else if (key == "train") {
            from_json(value, "train", c.train);
        } else if (key == "synth") {
            synth_from_json(value, c.synth);
        } else if (key == "decode") {
            from_json(value, "decode", c.decode);
        } else if (key == "paths") {
            paths_from_json(value, c.paths);
        } else {
            throw ConfigError("unknown config section '" + key + "'");
        }
    }
    return c;
}

RunConfig parse_config(const std::optional<fs::path>& file, std::span<const std::string> overrides) {
    Json root = Json::object();
    if (file) {
        std::ifstream in(*file, std::ios::binary);
        if (!in) {
            throw ConfigError("cannot open config file " + file->string());
        }
        try {
            root = Json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("config file " + file->string() + " is not valid JSON: " + e.what());
        }
        if (!root.is_object()) {
            throw ConfigError("config root must be a JSON object");
        }
    }
    for (const auto& o : overrides) {
        apply_override(root, o);
    }
    return run_config_from_json(root);
}

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Embedding-prefix report generation toolkit", "prefixbridge"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    const auto specs = subcommands();
    std::vector<std::map<std::string, std::string>> values(specs.size());
    std::vector<std::string> config_paths(specs.size());
    std::vector<CLI::App*> apps;
    for (std::size_t s = 0; s < specs.size(); ++s) {
        CLI::App* sc = app.add_subcommand(specs[s].name, specs[s].help);
        sc->allow_extras();
        sc->add_option("--config", config_paths[s], "JSON config file");
        for (const auto& [flag, key] : specs[s].flags) {
            sc->add_option(flag, values[s][key], std::string("sets ") + key);
        }
        apps.push_back(sc);
    }

    std::vector<std::string> argv(args.rbegin(), args.rend());
    try {
        app.parse(argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForVersion&) {
        out << kVersion << "\n";
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << "\n";
        return kExitUsage;
    }

    for (std::size_t s = 0; s < specs.size(); ++s) {
        CLI::App* sc = apps[s];
        if (!sc->parsed()) {
            continue;
        }
        std::vector<std::string> overrides;
        try {
            overrides = dotted_overrides(sc->remaining());
        } catch (const CLI::Error& e) {
            err << "usage error: " << e.what() << "\n";
            return kExitUsage;
        }
        for (const auto& [flag, key] : specs[s].flags) {
            if (sc->count(flag) > 0) {
                overrides.push_back(std::string(key) + "=" + values[s][key]);
            }
        }
        try {
            std::optional<fs::path> file;
            if (!config_paths[s].empty()) {
                file = config_paths[s];
            }
            const RunConfig config = parse_config(file, overrides);
            return specs[s].body(config, out);
        } catch (const std::exception& e) {
            err << "error: " << e.what() << "\n";
            return kExitError;
        }
    }
    err << "usage error: no subcommand\n";
    return kExitUsage;
}

}  // namespace pfx
