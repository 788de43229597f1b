// SPDX-License-Identifier: Apache-2.0
//
// Tape-based reverse-mode automatic differentiation.
//
// A Graph records every operation in creation order, which is already a
// topological order, so backward() is a single reverse sweep. Parameters are
// leaves that alias tensors in a ParameterStore; after the sweep their
// gradients are added into the store. Parameters under a frozen prefix enter
// the graph as constants, so no weight gradient is ever computed for them,
// while gradients still flow through the activations they touch.

#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "prefixbridge/params.hpp"
#include "prefixbridge/tensor.hpp"

namespace pfx {

struct Var {
    static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
    std::size_t id = npos;

    bool valid() const noexcept { return id != npos; }
};

enum class GradMode { Enabled, Disabled };

template <class T>
class Graph {
public:
    using BackwardFn = std::function<void(Graph&, const Tensor<T>& out_grad)>;

    Graph() = default;
    explicit Graph(ParameterStore<T>& store, GradMode mode = GradMode::Enabled)
        : store_(&store), grad_enabled_(mode == GradMode::Enabled) {}

    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    /// Leaf aliasing a store tensor. Repeated calls return the same node.
    Var param(const std::string& name);
    Var constant(Tensor<T> value);
    /// Leaf that requires grad even without a store (tests, probes).
    Var variable(Tensor<T> value);

    const Tensor<T>& value(Var v) const { return *node(v).value; }
    /// Gradient after backward(); nullptr when nothing flowed into `v`.
    const Tensor<T>* grad(Var v) const;
    bool requires_grad(Var v) const { return node(v).requires_grad; }
    bool grad_enabled() const noexcept { return grad_enabled_; }
    std::size_t size() const noexcept { return nodes_.size(); }

    /// Appends an op output. Throws NumericsError if `out` holds NaN/Inf.
    Var record(const char* op, Tensor<T> out, std::initializer_list<Var> inputs, BackwardFn backward);
    Var record(const char* op, Tensor<T> out, std::span<const Var> inputs, BackwardFn backward);

    /// Zero-initialized on first access. Only valid for nodes requiring grad.
    Tensor<T>& grad_buffer(Var v);

    /// Seeds d(loss)/d(loss) = 1 and sweeps the tape. `loss` must hold one element.
    void backward(Var loss);

private:
    struct Node {
        Tensor<T> owned;
        const Tensor<T>* value = nullptr;
        std::optional<Tensor<T>> grad;
        BackwardFn backward;
        bool requires_grad = false;
        std::string param_name;
        const char* op = "";
    };

    Node& node(Var v);
    const Node& node(Var v) const;
    Var push(Node&& n);

    ParameterStore<T>* store_ = nullptr;
    bool grad_enabled_ = true;
    std::deque<Node> nodes_;
    std::unordered_map<std::string, Var> params_;
};

// ---------------------------------------------------------------------------
// Differentiable operations. Matrices are rank-2 row-major; vectors used as
// biases / norm affine terms apply over the last axis.

/// [m×k]·[k×n] -> [m×n]
template <class T>
Var matmul(Graph<T>& g, Var a, Var b);
/// [m×k]·[n×k]ᵀ -> [m×n]
template <class T>
Var matmul_nt(Graph<T>& g, Var a, Var b);

template <class T>
Var add(Graph<T>& g, Var a, Var b);
/// x[...×n] + bias[n]
template <class T>
Var add_bias(Graph<T>& g, Var x, Var bias);
template <class T>
Var scale(Graph<T>& g, Var x, T factor);
/// tanh-approximated GELU.
template <class T>
Var gelu(Graph<T>& g, Var x);

template <class T>
Var layer_norm(Graph<T>& g, Var x, Var gamma, Var beta, T eps = T(1e-5));

/// Row-wise softmax with max subtraction. With `causal`, entry (i, j) for
/// j > i is excluded and receives probability exactly 0.
template <class T>
Var softmax_rows(Graph<T>& g, Var x, bool causal = false);

template <class T>
Var concat_rows(Graph<T>& g, Var top, Var bottom);
template <class T>
Var slice_rows(Graph<T>& g, Var x, std::size_t begin, std::size_t count);
template <class T>
Var concat_cols(Graph<T>& g, std::span<const Var> parts);
template <class T>
Var slice_cols(Graph<T>& g, Var x, std::size_t begin, std::size_t count);
template <class T>
Var reshape(Graph<T>& g, Var x, Shape shape);

/// Rows of `table` selected by `ids`.
template <class T>
Var gather_rows(Graph<T>& g, Var table, std::span<const int> ids);

/// Mean negative log-softmax of `targets` over rows where `mask` is set.
/// Throws InvalidBatchError when no row is masked in.
template <class T>
Var cross_entropy(Graph<T>& g, Var logits, std::span<const int> targets, const std::vector<bool>& mask);

/// Mean of one-element tensors.
template <class T>
Var mean_scalars(Graph<T>& g, std::span<const Var> scalars);

/// Σ x² as a one-element tensor.
template <class T>
Var sum_squares(Graph<T>& g, Var x);

// ---------------------------------------------------------------------------
// Non-differentiable kernels reused by the ops above and by decoding.

namespace kernels {

/// out[m×n] (+)= a[m×k]·b[k×n]
template <class T>
void gemm_nn(std::span<const T> a, std::span<const T> b, std::span<T> out, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate);
/// out[m×n] (+)= a[m×k]·b[n×k]ᵀ
template <class T>
void gemm_nt(std::span<const T> a, std::span<const T> b, std::span<T> out, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate);
/// out[k×n] (+)= a[m×k]ᵀ·b[m×n]
template <class T>
void gemm_tn(std::span<const T> a, std::span<const T> b, std::span<T> out, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate);

template <class T>
Tensor<T> softmax_rows(const Tensor<T>& x, bool causal = false);

}  // namespace kernels

}  // namespace pfx
