// SPDX-License-Identifier: Apache-2.0
//
// Miniature decoder-only causal language model. Pretrained on report text,
// then frozen and conditioned through prefix rows prepended to its input.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prefixbridge/autodiff.hpp"
#include "prefixbridge/corpus.hpp"
#include "prefixbridge/transformer.hpp"

namespace pfx {

inline constexpr const char* kLmPrefix = "lm.";

struct LMConfig {
    std::size_t vocab_size = 0;
    std::size_t d_model = 64;
    std::size_t n_layers = 2;
    std::size_t n_heads = 4;
    std::size_t max_seq = 128;

    /// Throws ConfigError (d_model % n_heads, zero extents).
    void validate() const;
    bool operator==(const LMConfig&) const = default;
};

/// tok_emb, pos_emb, blocks, ln_f. The output projection is tied to tok_emb.
std::vector<TensorSpec> lm_manifest(const LMConfig& config);
/// V·d + S·d + L·(12d² + 13d) + 2d
std::size_t lm_param_count(const LMConfig& config);

ParameterStore<float> lm_init(const LMConfig& config, std::uint64_t seed);

/// Logits [(p + t) × vocab] for the sequence [prefix rows; token embeddings],
/// with positional embeddings added over all p + t rows. Throws LengthError
/// when p + t exceeds max_seq.
///
/// `position_offset` shifts every row's position (row r uses position
/// offset + r); callers other than pretraining leave it at zero.
template <class T>
Var lm_forward(Graph<T>& g, const LMConfig& config, std::optional<Var> prefix, std::span<const int> ids,
               std::vector<Var>* attention_probs = nullptr, std::size_t position_offset = 0);

/// Next-token loss over the token part of the sequence: the row of token k
/// predicts token k + 1 (BOS/EOS included as targets); prefix rows and the
/// final row are masked out.
template <class T>
Var sequence_loss(Graph<T>& g, const LMConfig& config, std::optional<Var> prefix, std::span<const int> ids,
                  std::size_t position_offset = 0);

struct PretrainConfig {
    std::size_t epochs = 10;
    std::size_t batch_size = 16;
    AdamHyper adam;
    std::uint64_t seed = 0;
    bool shuffle = true;
    /// Each report is placed at a start position drawn uniformly from
    /// [0, min(max_position_offset, max_seq - length)], redrawn every epoch.
    /// A nonzero range keeps the frozen model usable when a prefix later
    /// shifts the report to the right. The default matches the default
    /// prefix_length.
    std::size_t max_position_offset = 4;

    bool operator==(const PretrainConfig&) const = default;
};

struct PretrainResult {
    ParameterStore<float> params;
    std::vector<double> step_losses;
    std::vector<double> epoch_losses;
    /// Mean per-report loss of the returned parameters.
    double final_loss = 0.0;
};

/// Next-token cross-entropy training without prefix, Adam over every "lm."
/// tensor. With epochs == 0 the returned parameters are the initialization.
PretrainResult lm_pretrain(std::span<const std::string> reports, const Vocabulary& vocab, const LMConfig& config,
                           const PretrainConfig& train);

/// Mean per-report next-token loss of `params` (no prefix).
double lm_corpus_loss(ParameterStore<float>& params, const LMConfig& config,
                      std::span<const std::vector<int>> sequences);

}  // namespace pfx
