// SPDX-License-Identifier: Apache-2.0

#include "prefixbridge/transformer.hpp"

#include <cmath>
#include <random>

#include "prefixbridge/rng.hpp"

namespace pfx {

std::size_t manifest_numel(const std::vector<TensorSpec>& manifest) {
    std::size_t total = 0;
    for (const auto& t : manifest) {
        total += t.numel();
    }
    return total;
}

std::vector<TensorSpec> block_manifest(const std::string& prefix, std::size_t d) {
    const std::size_t hidden = kMlpRatio * d;
    return {
        {prefix + ".ln1.gamma", {d}, InitKind::Ones},
        {prefix + ".ln1.beta", {d}, InitKind::Zeros},
        {prefix + ".attn.wq", {d, d}},
        {prefix + ".attn.bq", {d}, InitKind::Zeros},
        {prefix + ".attn.wk", {d, d}},
        {prefix + ".attn.bk", {d}, InitKind::Zeros},
        {prefix + ".attn.wv", {d, d}},
        {prefix + ".attn.bv", {d}, InitKind::Zeros},
        {prefix + ".attn.wo", {d, d}},
        {prefix + ".attn.bo", {d}, InitKind::Zeros},
        {prefix + ".ln2.gamma", {d}, InitKind::Ones},
        {prefix + ".ln2.beta", {d}, InitKind::Zeros},
        {prefix + ".mlp.w1", {d, hidden}},
        {prefix + ".mlp.b1", {hidden}, InitKind::Zeros},
        {prefix + ".mlp.w2", {hidden, d}},
        {prefix + ".mlp.b2", {d}, InitKind::Zeros},
    };
}

std::size_t block_param_count(std::size_t d) {
    return 12 * d * d + 13 * d;
}

void init_from_manifest(ParameterStore<float>& store, const std::vector<TensorSpec>& manifest, std::uint64_t seed) {
    std::mt19937_64 rng(splitmix64(seed));
    std::normal_distribution<double> normal(0.0, kInitStd);
    for (const auto& spec : manifest) {
        Tensor<float> t(spec.shape);
        switch (spec.init) {
            case InitKind::Normal:
                for (auto& v : t.data()) {
                    v = static_cast<float>(normal(rng));
                }
                break;
            case InitKind::Ones:
                t.fill(1.0f);
                break;
            case InitKind::Zeros:
                break;
        }
        store.add(spec.name, std::move(t));
    }
}

namespace {

template <class T>
Var linear(Graph<T>& g, Var x, const std::string& w, const std::string& b) {
    return add_bias(g, matmul(g, x, g.param(w)), g.param(b));
}

}  // namespace

template <class T>
Var transformer_block(Graph<T>& g, const std::string& prefix, Var x, std::size_t n_heads, bool causal,
                      std::vector<Var>* attention_probs) {
    const std::size_t d = g.value(x).cols();
    if (n_heads == 0 || d % n_heads != 0) {
        throw ConfigError("d_model " + std::to_string(d) + " is not divisible by n_heads " + std::to_string(n_heads));
    }
    const std::size_t head_dim = d / n_heads;
    const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(head_dim)));

    Var h = layer_norm(g, x, g.param(prefix + ".ln1.gamma"), g.param(prefix + ".ln1.beta"));
    Var q = linear(g, h, prefix + ".attn.wq", prefix + ".attn.bq");
    Var k = linear(g, h, prefix + ".attn.wk", prefix + ".attn.bk");
    Var v = linear(g, h, prefix + ".attn.wv", prefix + ".attn.bv");
    std::vector<Var> heads;
    heads.reserve(n_heads);
    for (std::size_t head = 0; head < n_heads; ++head) {
        const std::size_t col = head * head_dim;
        Var qh = slice_cols(g, q, col, head_dim);
        Var kh = slice_cols(g, k, col, head_dim);
        Var vh = slice_cols(g, v, col, head_dim);
        Var probs = softmax_rows(g, scale(g, matmul_nt(g, qh, kh), inv_sqrt), causal);
        if (attention_probs != nullptr) {
            attention_probs->push_back(probs);
        }
        heads.push_back(matmul(g, probs, vh));
    }
    Var attn = n_heads == 1 ? heads.front() : concat_cols<T>(g, heads);
    attn = linear(g, attn, prefix + ".attn.wo", prefix + ".attn.bo");
    Var resid = add(g, x, attn);

    Var m = layer_norm(g, resid, g.param(prefix + ".ln2.gamma"), g.param(prefix + ".ln2.beta"));
    m = gelu(g, linear(g, m, prefix + ".mlp.w1", prefix + ".mlp.b1"));
    m = linear(g, m, prefix + ".mlp.w2", prefix + ".mlp.b2");
    return add(g, resid, m);
}

template Var transformer_block<float>(Graph<float>&, const std::string&, Var, std::size_t, bool, std::vector<Var>*);
template Var transformer_block<double>(Graph<double>&, const std::string&, Var, std::size_t, bool,
                                       std::vector<Var>*);

}  // namespace pfx
