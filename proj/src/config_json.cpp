// SPDX-License-Identifier: Apache-2.0

#include "prefixbridge/config_json.hpp"

namespace pfx {

JsonFields::JsonFields(const Json& object, std::string section) : object_(object), section_(std::move(section)) {
    if (!object_.is_object()) {
        throw ConfigError("config section '" + section_ + "' must be a JSON object");
    }
}

std::string JsonFields::path(std::string_view key) const {
    return section_.empty() ? std::string(key) : section_ + "." + std::string(key);
}

const Json* JsonFields::find(const char* key) {
    seen_.insert(key);
    auto it = object_.find(key);
    return it == object_.end() ? nullptr : &*it;
}

void JsonFields::throw_type(const char* key, const char* expected) const {
    throw ConfigError("config key '" + path(key) + "' must be " + expected);
}

void JsonFields::read(const char* key, double& out) {
    if (const Json* v = find(key)) {
        if (!v->is_number()) {
            throw_type(key, "a number");
        }
        out = v->get<double>();
    }
}

void JsonFields::read(const char* key, bool& out) {
    if (const Json* v = find(key)) {
        if (!v->is_boolean()) {
            throw_type(key, "a boolean");
        }
        out = v->get<bool>();
    }
}

void JsonFields::read(const char* key, std::string& out) {
    if (const Json* v = find(key)) {
        if (!v->is_string()) {
            throw_type(key, "a string");
        }
        out = v->get<std::string>();
    }
}

void JsonFields::finish() const {
    for (const auto& [key, value] : object_.items()) {
        if (!seen_.contains(key)) {
            throw ConfigError("unknown config key '" + path(key) + "'");
        }
    }
}

// ---------------------------------------------------------------------------

namespace {

Json adam_json(const AdamHyper& a) {
    return {{"lr", a.lr}, {"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.eps}};
}

void read_adam(JsonFields& f, AdamHyper& a) {
    f.read("lr", a.lr);
    f.read("beta1", a.beta1);
    f.read("beta2", a.beta2);
    f.read("eps", a.eps);
}

}  // namespace

Json to_json(const LMConfig& c) {
    return {{"vocab_size", c.vocab_size},
            {"d_model", c.d_model},
            {"n_layers", c.n_layers},
            {"n_heads", c.n_heads},
            {"max_seq", c.max_seq}};
}

Json to_json(const MapperConfig& c) {
    return {{"clip_dim", c.clip_dim},   {"d_model", c.d_model},   {"clip_length", c.clip_length},
            {"prefix_length", c.prefix_length}, {"n_layers", c.n_layers}, {"n_heads", c.n_heads}};
}

Json to_json(const TrainConfig& c) {
    Json j = adam_json(c.adam);
    j["mode"] = to_string(c.mode);
    j["epochs"] = c.epochs;
    j["batch_size"] = c.batch_size;
    j["seed"] = c.seed;
    j["shuffle"] = c.shuffle;
    return j;
}

Json to_json(const PretrainConfig& c) {
    Json j = adam_json(c.adam);
    j["epochs"] = c.epochs;
    j["batch_size"] = c.batch_size;
    j["seed"] = c.seed;
    j["shuffle"] = c.shuffle;
    j["max_position_offset"] = c.max_position_offset;
    return j;
}

Json to_json(const DecodeConfig& c) {
    return {{"beam", c.strategy == DecodeStrategy::Beam ? c.beam_width : 0}, {"max_len", c.max_len}};
}

void from_json(const Json& j, std::string_view section, LMConfig& c) {
    JsonFields f(j, std::string(section));
    f.read("vocab_size", c.vocab_size);
    f.read("d_model", c.d_model);
    f.read("n_layers", c.n_layers);
    f.read("n_heads", c.n_heads);
    f.read("max_seq", c.max_seq);
    f.finish();
}

void from_json(const Json& j, std::string_view section, MapperConfig& c) {
    JsonFields f(j, std::string(section));
    f.read("clip_dim", c.clip_dim);
    f.read("d_model", c.d_model);
    f.read("clip_length", c.clip_length);
    f.read("prefix_length", c.prefix_length);
    f.read("n_layers", c.n_layers);
    f.read("n_heads", c.n_heads);
    f.finish();
}

void from_json(const Json& j, std::string_view section, TrainConfig& c) {
    JsonFields f(j, std::string(section));
    std::string mode = to_string(c.mode);
    f.read("mode", mode);
    c.mode = parse_train_mode(mode);
    f.read("epochs", c.epochs);
    f.read("batch_size", c.batch_size);
    f.read("seed", c.seed);
    f.read("shuffle", c.shuffle);
    read_adam(f, c.adam);
    f.finish();
}

void from_json(const Json& j, std::string_view section, PretrainConfig& c) {
    JsonFields f(j, std::string(section));
    f.read("epochs", c.epochs);
    f.read("batch_size", c.batch_size);
    f.read("seed", c.seed);
    f.read("shuffle", c.shuffle);
    f.read("max_position_offset", c.max_position_offset);
    read_adam(f, c.adam);
    f.finish();
}

void from_json(const Json& j, std::string_view section, DecodeConfig& c) {
    JsonFields f(j, std::string(section));
    std::size_t beam = c.strategy == DecodeStrategy::Beam ? c.beam_width : 0;
    f.read("beam", beam);
    f.read("max_len", c.max_len);
    f.finish();
    c.strategy = beam >= 1 ? DecodeStrategy::Beam : DecodeStrategy::Greedy;
    c.beam_width = std::max<std::size_t>(beam, 1);
}

}  // namespace pfx
