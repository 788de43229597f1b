// SPDX-License-Identifier: Apache-2.0
//
// Autoregressive report generation: mapper prefix + BOS, then greedy or
// length-normalized beam search over the frozen LM.

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "prefixbridge/trainer.hpp"

namespace pfx {

enum class DecodeStrategy { Greedy, Beam };

struct DecodeConfig {
    DecodeStrategy strategy = DecodeStrategy::Greedy;
    std::size_t beam_width = 1;
    std::size_t max_len = 64;

    void validate() const;
    bool operator==(const DecodeConfig&) const = default;
};

struct DecodeResult {
    /// Generated ids after BOS, including EOS when one was produced.
    std::vector<int> ids;
    std::string text;
    /// Sum of token log-probabilities divided by ids.size() (0 when empty).
    double score = 0.0;
};

/// Argmax token per step (ties to the lowest id); stops at EOS or after
/// max_len tokens. Throws LengthError when prefix + 1 + max_len > max_seq.
DecodeResult greedy_decode(Checkpoint& model, std::span<const float> embedding, const DecodeConfig& config);

/// Keeps the `beam_width` best expansions per step ranked by normalized score
/// (ties: lexicographically smaller id sequence). Expansions ending in EOS
/// retire. Returns the best retired hypothesis, or the best live one when
/// none retired within max_len steps.
DecodeResult beam_decode(Checkpoint& model, std::span<const float> embedding, const DecodeConfig& config);

/// Dispatches on config.strategy.
DecodeResult generate_report(Checkpoint& model, std::span<const float> embedding, const DecodeConfig& config);

/// Normalized score of a given continuation under the model (teacher-forced).
double sequence_score(Checkpoint& model, std::span<const float> embedding, std::span<const int> ids);

}  // namespace pfx
