// SPDX-License-Identifier: Apache-2.0

#include "prefixbridge/lm.hpp"

#include <algorithm>
#include <random>

#include "prefixbridge/rng.hpp"

namespace pfx {

void LMConfig::validate() const {
    if (vocab_size == 0 || d_model == 0 || n_heads == 0 || max_seq == 0) {
        throw ConfigError("LM config needs positive vocab_size, d_model, n_heads and max_seq");
    }
    if (d_model % n_heads != 0) {
        throw ConfigError("LM d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                          std::to_string(n_heads));
    }
}

std::vector<TensorSpec> lm_manifest(const LMConfig& config) {
    config.validate();
    const std::size_t d = config.d_model;
    std::vector<TensorSpec> manifest{
        {"lm.tok_emb", {config.vocab_size, d}},
        {"lm.pos_emb", {config.max_seq, d}},
    };
    for (std::size_t l = 0; l < config.n_layers; ++l) {
        auto block = block_manifest("lm.block" + std::to_string(l), d);
        manifest.insert(manifest.end(), block.begin(), block.end());
    }
    manifest.push_back({"lm.ln_f.gamma", {d}, InitKind::Ones});
    manifest.push_back({"lm.ln_f.beta", {d}, InitKind::Zeros});
    return manifest;
}

std::size_t lm_param_count(const LMConfig& config) {
    config.validate();
    const std::size_t d = config.d_model;
    return config.vocab_size * d + config.max_seq * d + config.n_layers * block_param_count(d) + 2 * d;
}

ParameterStore<float> lm_init(const LMConfig& config, std::uint64_t seed) {
    ParameterStore<float> store;
    init_from_manifest(store, lm_manifest(config), seed);
    return store;
}

template <class T>
Var lm_forward(Graph<T>& g, const LMConfig& config, std::optional<Var> prefix, std::span<const int> ids,
               std::vector<Var>* attention_probs, std::size_t position_offset) {
    const std::size_t p = prefix ? g.value(*prefix).rows() : 0;
    const std::size_t t = ids.size();
    if (p + t == 0) {
        throw LengthError("lm_forward: empty input sequence");
    }
    if (position_offset + p + t > config.max_seq) {
        throw LengthError("lm_forward: sequence of " + std::to_string(p + t) + " positions at offset " +
                          std::to_string(position_offset) + " exceeds max_seq " + std::to_string(config.max_seq));
    }
    if (prefix && g.value(*prefix).cols() != config.d_model) {
        throw DimensionError("lm_forward: prefix " + shape_str(g.value(*prefix).shape()) +
                             " does not match d_model " + std::to_string(config.d_model));
    }
    const Var tok_emb = g.param("lm.tok_emb");
    Var x;
    if (t > 0) {
        Var tokens = gather_rows(g, tok_emb, ids);
        x = prefix ? concat_rows(g, *prefix, tokens) : tokens;
    } else {
        x = *prefix;
    }
    x = add(g, x, slice_rows(g, g.param("lm.pos_emb"), position_offset, p + t));
    for (std::size_t l = 0; l < config.n_layers; ++l) {
        x = transformer_block(g, "lm.block" + std::to_string(l), x, config.n_heads, /*causal=*/true, attention_probs);
    }
    x = layer_norm(g, x, g.param("lm.ln_f.gamma"), g.param("lm.ln_f.beta"));
    return matmul_nt(g, x, tok_emb);
}

template <class T>
Var sequence_loss(Graph<T>& g, const LMConfig& config, std::optional<Var> prefix, std::span<const int> ids,
                  std::size_t position_offset) {
    if (ids.size() < 2) {
        throw InvalidBatchError("sequence_loss needs at least two tokens");
    }
    const Var logits = lm_forward(g, config, prefix, ids, nullptr, position_offset);
    const std::size_t p = prefix ? g.value(*prefix).rows() : 0;
    const std::size_t rows = p + ids.size();
    std::vector<int> targets(rows, token_id::kPad);
    std::vector<bool> mask(rows, false);
    for (std::size_t k = 0; k + 1 < ids.size(); ++k) {
        targets[p + k] = ids[k + 1];
        mask[p + k] = true;
    }
    return cross_entropy(g, logits, targets, mask);
}

double lm_corpus_loss(ParameterStore<float>& params, const LMConfig& config,
                      std::span<const std::vector<int>> sequences) {
    double total = 0.0;
    for (const auto& seq : sequences) {
        Graph<float> g(params, GradMode::Disabled);
        total += g.value(sequence_loss(g, config, std::nullopt, seq))[0];
    }
    return sequences.empty() ? 0.0 : total / static_cast<double>(sequences.size());
}

PretrainResult lm_pretrain(std::span<const std::string> reports, const Vocabulary& vocab, const LMConfig& config,
                           const PretrainConfig& train) {
    if (reports.empty()) {
        throw InvalidCorpusError("LM pretraining needs a non-empty corpus");
    }
    if (train.batch_size == 0) {
        throw ConfigError("batch_size must be >= 1");
    }
    train.adam.validate();
    if (config.vocab_size != vocab.size()) {
        throw ConfigError("LM vocab_size " + std::to_string(config.vocab_size) + " differs from vocabulary size " +
                          std::to_string(vocab.size()));
    }
    std::vector<std::vector<int>> sequences;
    sequences.reserve(reports.size());
    for (const auto& r : reports) {
        sequences.push_back(encode(r, vocab));
        if (sequences.back().size() > config.max_seq) {
            throw LengthError("report of " + std::to_string(sequences.back().size()) + " tokens exceeds max_seq");
        }
    }

    PretrainResult result;
    result.params = lm_init(config, derive_seed(train.seed, 1));
    for (std::size_t epoch = 0; epoch < train.epochs; ++epoch) {
        const auto order = epoch_order(sequences.size(), train.seed, epoch, train.shuffle);
        std::mt19937_64 offset_rng(derive_seed(train.seed, 0x0ff5e70000ULL + epoch));
        double epoch_total = 0.0;
        for (std::size_t start = 0; start < order.size(); start += train.batch_size) {
            const std::size_t end = std::min(order.size(), start + train.batch_size);
            Graph<float> g(result.params);
            std::vector<Var> losses;
            for (std::size_t i = start; i < end; ++i) {
                const auto& seq = sequences[order[i]];
                std::size_t offset = 0;
                if (train.max_position_offset > 0) {
                    const std::size_t hi = std::min(train.max_position_offset, config.max_seq - seq.size());
                    offset = std::uniform_int_distribution<std::size_t>(0, hi)(offset_rng);
                }
                losses.push_back(sequence_loss(g, config, std::nullopt, seq, offset));
            }
            const Var loss = mean_scalars<float>(g, losses);
            const double value = g.value(loss)[0];
            g.backward(loss);
            adam_step(result.params, train.adam);
            result.step_losses.push_back(value);
            epoch_total += value * static_cast<double>(end - start);
        }
        result.epoch_losses.push_back(epoch_total / static_cast<double>(sequences.size()));
    }
    result.final_loss = lm_corpus_loss(result.params, config, sequences);
    return result;
}

template Var lm_forward<float>(Graph<float>&, const LMConfig&, std::optional<Var>, std::span<const int>,
                               std::vector<Var>*, std::size_t);
template Var lm_forward<double>(Graph<double>&, const LMConfig&, std::optional<Var>, std::span<const int>,
                               std::vector<Var>*, std::size_t);
template Var sequence_loss<float>(Graph<float>&, const LMConfig&, std::optional<Var>, std::span<const int>,
                                  std::size_t);
template Var sequence_loss<double>(Graph<double>&, const LMConfig&, std::optional<Var>, std::span<const int>,
                                  std::size_t);

}  // namespace pfx
