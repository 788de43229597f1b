// SPDX-License-Identifier: Apache-2.0

#include "prefixbridge/trainer.hpp"

#include <algorithm>
#include <cstdio>

#include "prefixbridge/rng.hpp"

namespace pfx {

std::string to_string(TrainMode mode) {
    return mode == TrainMode::PrefixTuning ? "prefix" : "finetune";
}

TrainMode parse_train_mode(std::string_view text) {
    if (text == "prefix" || text == "prefix_tuning" || text == "PrefixTuning") {
        return TrainMode::PrefixTuning;
    }
    if (text == "finetune" || text == "fine_tuning" || text == "FineTuning") {
        return TrainMode::FineTuning;
    }
    throw ConfigError("unknown training mode '" + std::string(text) + "' (expected prefix|finetune)");
}

void TrainConfig::validate() const {
    if (batch_size < 1) {
        throw ConfigError("train.batch_size must be >= 1");
    }
    adam.validate();
}

std::vector<std::string> freeze_mask(TrainMode mode) {
    if (mode == TrainMode::PrefixTuning) {
        return {kLmPrefix};
    }
    return {};
}

std::size_t trainable_param_count(const Checkpoint& model, TrainMode mode) {
    const auto frozen = freeze_mask(mode);
    std::size_t total = 0;
    for (const auto& [name, p] : model.params.entries()) {
        const bool is_frozen = std::any_of(frozen.begin(), frozen.end(),
                                           [&](const std::string& f) { return name.starts_with(f); });
        if (!is_frozen) {
            total += p.value.size();
        }
    }
    return total;
}

std::vector<TrainingExample> prepare_examples(std::span<const EmbeddingRecord> records, const Vocabulary& vocab,
                                              const LMConfig& lm, const MapperConfig& mapper) {
    std::vector<TrainingExample> out;
    out.reserve(records.size());
    for (const auto& r : records) {
        if (r.embedding.size() != mapper.clip_dim) {
            throw DimensionError("record '" + r.id + "' has a " + std::to_string(r.embedding.size()) +
                                 "-d embedding, mapper expects " + std::to_string(mapper.clip_dim));
        }
        TrainingExample ex{r.id, r.embedding, encode(r.report, vocab)};
        if (mapper.prefix_length + ex.tokens.size() > lm.max_seq) {
            throw LengthError("record '" + r.id + "' encodes to " + std::to_string(ex.tokens.size()) +
                              " tokens; with a prefix of " + std::to_string(mapper.prefix_length) +
                              " this exceeds max_seq " + std::to_string(lm.max_seq));
        }
        out.push_back(std::move(ex));
    }
    return out;
}

template <class T>
Var example_loss(Graph<T>& g, const LMConfig& lm, const MapperConfig& mapper, const TrainingExample& example,
                 Var* logits_out) {
    const Var prefix = map_embedding(g, mapper, example.embedding);
    const Var logits = lm_forward(g, lm, prefix, example.tokens);
    if (logits_out != nullptr) {
        *logits_out = logits;
    }
    const std::size_t p = mapper.prefix_length;
    const std::size_t rows = p + example.tokens.size();
    std::vector<int> targets(rows, token_id::kPad);
    std::vector<bool> mask(rows, false);
    for (std::size_t k = 0; k + 1 < example.tokens.size(); ++k) {
        targets[p + k] = example.tokens[k + 1];
        mask[p + k] = true;
    }
    return cross_entropy(g, logits, targets, mask);
}

template <class T>
Var batch_loss(Graph<T>& g, const LMConfig& lm, const MapperConfig& mapper, std::span<const TrainingExample> batch) {
    std::vector<Var> losses;
    losses.reserve(batch.size());
    for (const auto& ex : batch) {
        losses.push_back(example_loss(g, lm, mapper, ex));
    }
    return mean_scalars<T>(g, losses);
}

namespace {

const MapperConfig& require_mapper(const Checkpoint& model) {
    if (!model.mapper) {
        throw ConfigError("checkpoint has no mapping network configuration");
    }
    return *model.mapper;
}

double mean_loss(Checkpoint& model, std::span<const TrainingExample> examples) {
    double total = 0.0;
    for (const auto& ex : examples) {
        Graph<float> g(model.params, GradMode::Disabled);
        total += g.value(example_loss(g, model.lm, *model.mapper, ex))[0];
    }
    return total / static_cast<double>(examples.size());
}

}  // namespace

double loss_step(Checkpoint& model, std::span<const EmbeddingRecord> batch) {
    const auto& mapper = require_mapper(model);
    if (batch.empty()) {
        throw InvalidBatchError("loss_step: empty batch");
    }
    const auto examples = prepare_examples(batch, model.vocab, model.lm, mapper);
    Graph<float> g(model.params, GradMode::Disabled);
    return g.value(batch_loss<float>(g, model.lm, mapper, examples))[0];
}

TrainResult train(const SplitSet& splits, Checkpoint start, const TrainConfig& config) {
    config.validate();
    const MapperConfig mapper = require_mapper(start);
    if (splits.train.empty()) {
        throw InvalidCorpusError("training split is empty");
    }
    if (mapper.d_model != start.lm.d_model) {
        throw ConfigError("mapper d_model " + std::to_string(mapper.d_model) + " differs from LM d_model " +
                          std::to_string(start.lm.d_model));
    }
    if (start.params.numel(kLmPrefix) == 0) {
        throw TrainingStateError("training needs a pretrained language model");
    }
    if (start.params.numel(kMapperPrefix) == 0) {
        start.params.merge(mapper_init(mapper, derive_seed(config.seed, 0x3a77)));
    }
    const auto train_examples = prepare_examples(splits.train, start.vocab, start.lm, mapper);
    const auto val_examples = prepare_examples(splits.val, start.vocab, start.lm, mapper);

    TrainResult result{std::move(start), {}};
    auto& model = result.model;
    model.train = config;
    model.params.set_frozen(freeze_mask(config.mode));

    std::vector<TrainingExample> batch;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const auto order = epoch_order(train_examples.size(), config.seed, epoch, config.shuffle);
        double epoch_total = 0.0;
        for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
            const std::size_t end = std::min(order.size(), begin + config.batch_size);
            batch.clear();
            for (std::size_t i = begin; i < end; ++i) {
                batch.push_back(train_examples[order[i]]);
            }
            Graph<float> g(model.params);
            const Var loss = batch_loss<float>(g, model.lm, mapper, batch);
            epoch_total += g.value(loss)[0] * static_cast<double>(end - begin);
            g.backward(loss);
            adam_step(model.params, config.adam);
        }
        EpochMetrics m;
        m.epoch = epoch + 1;
        m.train_loss = epoch_total / static_cast<double>(train_examples.size());
        if (!val_examples.empty()) {
            m.val_loss = mean_loss(model, val_examples);
        }
        result.log.push_back(m);
    }
    model.params.set_frozen({});
    return result;
}

std::string metrics_csv(std::span<const EpochMetrics> log) {
    std::string out = "epoch,train_loss,val_loss\n";
    char buf[128];
    for (const auto& m : log) {
        std::snprintf(buf, sizeof(buf), "%zu,%.6f,", m.epoch, m.train_loss);
        out += buf;
        if (m.val_loss) {
            std::snprintf(buf, sizeof(buf), "%.6f", *m.val_loss);
            out += buf;
        }
        out += '\n';
    }
    return out;
}

template Var example_loss<float>(Graph<float>&, const LMConfig&, const MapperConfig&, const TrainingExample&, Var*);
template Var example_loss<double>(Graph<double>&, const LMConfig&, const MapperConfig&, const TrainingExample&,
                                  Var*);
template Var batch_loss<float>(Graph<float>&, const LMConfig&, const MapperConfig&, std::span<const TrainingExample>);
template Var batch_loss<double>(Graph<double>&, const LMConfig&, const MapperConfig&,
                                std::span<const TrainingExample>);

}  // namespace pfx
