// SPDX-License-Identifier: Apache-2.0
//
// Deterministic synthetic (embedding, report) pairs. Each embedding is the
// normalized sum of the basis vectors of the findings it encodes plus gaussian
// noise, so a linear probe can recover the findings and the report is a fixed
// template over them.
//
// Randomness: std::mt19937_64 seeded through splitmix64. Output is
// bit-reproducible for a given seed within one build; std::normal_distribution
// is implementation-defined, so different standard libraries may differ.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "prefixbridge/corpus.hpp"
#include "prefixbridge/rng.hpp"

namespace pfx {

inline constexpr std::size_t kDefaultFindingCount = 8;

/// The K = 8 default finding names, in basis order.
const std::vector<std::string>& default_finding_names();

struct FindingBasis {
    std::uint64_t seed = 0;
    std::vector<std::string> names;
    /// Unit-norm rows, stored in double so single-finding noise-free samples
    /// reproduce their basis vector exactly after rounding to float.
    std::vector<std::vector<double>> vectors;

    std::size_t size() const { return vectors.size(); }
    std::size_t dim() const { return vectors.empty() ? 0 : vectors.front().size(); }
    std::vector<float> vector_f32(std::size_t i) const;
    /// Index of the basis row with the largest cosine similarity to `e`.
    std::size_t nearest(std::span<const float> e) const;
};

/// Throws ConfigError when K < 1 or clip_dim < 1, DegenerateBasisError when
/// 100 redraws fail to produce pairwise |cos| < 0.99.
FindingBasis gen_basis(std::uint64_t seed, std::size_t k = kDefaultFindingCount,
                       std::size_t clip_dim = kDefaultClipDim);

struct SynthConfig {
    FindingBasis basis;
    double noise_sigma = 0.05;
    std::size_t max_findings_per_sample = 3;

    void validate() const;
};

/// `findings` are basis indices; they are reported in basis order regardless
/// of the order given. Throws InvalidSampleError for an empty or oversized set.
EmbeddingRecord synth_record(const std::vector<std::size_t>& findings, const SynthConfig& config,
                             std::uint64_t sample_seed, std::string id = "synth");

std::string synth_report(const std::vector<std::size_t>& findings, const FindingBasis& basis);

/// Uniform draw over all non-empty finding subsets of size <= max.
std::vector<std::size_t> sample_findings(const SynthConfig& config, std::uint64_t sample_seed);

SplitSet gen_split(std::size_t n_train, std::size_t n_val, std::size_t n_test, const SynthConfig& config,
                   std::uint64_t seed);

}  // namespace pfx
