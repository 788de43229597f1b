// SPDX-License-Identifier: Apache-2.0
//
// Mapping network: turns one vision embedding into prefix rows for the LM.
//
//   e[clip_dim] --linear--> clip_length × d_model "clip tokens"
//   [prefix constant (prefix_length × d_model); clip tokens]
//     --bidirectional transformer (no positions, no final norm)-->
//   first prefix_length rows = LM prefix
//
// The prefix constant attends to the clip tokens, which is how image
// information reaches the rows that condition the language model.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "prefixbridge/autodiff.hpp"
#include "prefixbridge/corpus.hpp"
#include "prefixbridge/transformer.hpp"

namespace pfx {

inline constexpr const char* kMapperPrefix = "mapper.";

struct MapperConfig {
    std::size_t clip_dim = kDefaultClipDim;
    std::size_t d_model = 64;
    std::size_t clip_length = 4;
    std::size_t prefix_length = 4;
    std::size_t n_layers = 1;
    std::size_t n_heads = 4;

    void validate() const;
    bool operator==(const MapperConfig&) const = default;
};

std::vector<TensorSpec> mapper_manifest(const MapperConfig& config);

/// Closed form: clip_dim·c·d + c·d + p·d + L·(12d² + 13d), with c = clip_length,
/// p = prefix_length.
std::size_t count_params(const MapperConfig& config);

ParameterStore<float> mapper_init(const MapperConfig& config, std::uint64_t seed);

/// Prefix [prefix_length × d_model]. Throws DimensionError when |e| != clip_dim.
template <class T>
Var map_embedding(Graph<T>& g, const MapperConfig& config, std::span<const float> e);

}  // namespace pfx
