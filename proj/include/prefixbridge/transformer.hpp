// SPDX-License-Identifier: Apache-2.0
//
// Pre-norm transformer block shared by the language model (causal) and the
// mapping network (bidirectional), plus tensor manifests used for
// initialization and parameter counting.

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "prefixbridge/autodiff.hpp"

namespace pfx {

inline constexpr std::size_t kMlpRatio = 4;
inline constexpr float kInitStd = 0.02f;

enum class InitKind { Normal, Zeros, Ones };

struct TensorSpec {
    std::string name;
    Shape shape;
    InitKind init = InitKind::Normal;

    std::size_t numel() const { return shape_numel(shape); }
};

std::size_t manifest_numel(const std::vector<TensorSpec>& manifest);

/// ln1, attention (wq/wk/wv/wo with biases), ln2, mlp (w1/b1/w2/b2).
std::vector<TensorSpec> block_manifest(const std::string& prefix, std::size_t d_model);

/// 12·d² + 13·d
std::size_t block_param_count(std::size_t d_model);

/// Appends the manifest's tensors to `store` in manifest order, drawing
/// Normal entries from N(0, 0.02²) with a generator seeded by `seed`.
void init_from_manifest(ParameterStore<float>& store, const std::vector<TensorSpec>& manifest, std::uint64_t seed);

/// x + attn(ln1(x)), then h + mlp(ln2(h)). When `attention_probs` is given,
/// the per-head softmax outputs are appended to it.
template <class T>
Var transformer_block(Graph<T>& g, const std::string& prefix, Var x, std::size_t n_heads, bool causal,
                      std::vector<Var>* attention_probs = nullptr);

}  // namespace pfx
