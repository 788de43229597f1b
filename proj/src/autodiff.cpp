// SPDX-License-Identifier: Apache-2.0

#include "prefixbridge/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace pfx {

namespace {

template <class T>
void require_matrix(const Tensor<T>& t, const char* op) {
    if (t.rank() != 2) {
        throw DimensionError(std::string(op) + ": expected a matrix, got shape " + shape_str(t.shape()));
    }
}

template <class T>
void add_into(std::span<T> dst, std::span<const T> src) {
    for (std::size_t i = 0; i < dst.size(); ++i) {
        dst[i] += src[i];
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// kernels

namespace kernels {

template <class T>
void gemm_nn(std::span<const T> a, std::span<const T> b, std::span<T> out, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
    if (!accumulate) {
        std::fill(out.begin(), out.end(), T{0});
    }
    const T* pa = a.data();
    const T* pb = b.data();
    T* pc = out.data();
    for (std::size_t i = 0; i < m; ++i) {
        T* __restrict crow = pc + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T aip = pa[i * k + p];
            const T* __restrict brow = pb + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += aip * brow[j];
            }
        }
    }
}

template <class T>
void gemm_nt(std::span<const T> a, std::span<const T> b, std::span<T> out, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
    std::vector<T> bt(k * n);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < k; ++c) {
            bt[c * n + r] = b[r * k + c];
        }
    }
    gemm_nn<T>(a, bt, out, m, k, n, accumulate);
}

template <class T>
void gemm_tn(std::span<const T> a, std::span<const T> b, std::span<T> out, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
    if (!accumulate) {
        std::fill(out.begin(), out.end(), T{0});
    }
    const T* pa = a.data();
    const T* pb = b.data();
    T* pc = out.data();
    for (std::size_t i = 0; i < m; ++i) {
        const T* __restrict brow = pb + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T aip = pa[i * k + p];
            T* __restrict crow = pc + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += aip * brow[j];
            }
        }
    }
}

template <class T>
Tensor<T> softmax_rows(const Tensor<T>& x, bool causal) {
    Tensor<T> y(x.shape());
    const std::size_t rows = x.rows();
    const std::size_t cols = x.cols();
    for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t live = causal ? std::min(r + 1, cols) : cols;
        auto in = x.row(r);
        auto out = y.row(r);
        T mx = in[0];
        for (std::size_t c = 1; c < live; ++c) {
            mx = std::max(mx, in[c]);
        }
        T sum = 0;
        for (std::size_t c = 0; c < live; ++c) {
            out[c] = std::exp(in[c] - mx);
            sum += out[c];
        }
        for (std::size_t c = 0; c < live; ++c) {
            out[c] /= sum;
        }
    }
    return y;
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// Graph

template <class T>
typename Graph<T>::Node& Graph<T>::node(Var v) {
    if (v.id >= nodes_.size()) {
        throw InvalidInputError("variable does not belong to this graph");
    }
    return nodes_[v.id];
}

template <class T>
const typename Graph<T>::Node& Graph<T>::node(Var v) const {
    return const_cast<Graph*>(this)->node(v);
}

template <class T>
Var Graph<T>::push(Node&& n) {
    nodes_.push_back(std::move(n));
    auto& back = nodes_.back();
    if (back.value == nullptr) {
        back.value = &back.owned;
    }
    return Var{nodes_.size() - 1};
}

template <class T>
Var Graph<T>::param(const std::string& name) {
    if (store_ == nullptr) {
        throw InvalidInputError("graph has no parameter store; cannot bind '" + name + "'");
    }
    if (auto it = params_.find(name); it != params_.end()) {
        return it->second;
    }
    Node n;
    n.value = &store_->value(name);
    n.requires_grad = grad_enabled_ && !store_->is_frozen(name);
    n.param_name = name;
    n.op = "param";
    Var v = push(std::move(n));
    params_.emplace(name, v);
    return v;
}

template <class T>
Var Graph<T>::constant(Tensor<T> value) {
    Node n;
    n.owned = std::move(value);
    n.op = "constant";
    return push(std::move(n));
}

template <class T>
Var Graph<T>::variable(Tensor<T> value) {
    Node n;
    n.owned = std::move(value);
    n.requires_grad = grad_enabled_;
    n.op = "variable";
    return push(std::move(n));
}

template <class T>
const Tensor<T>* Graph<T>::grad(Var v) const {
    const auto& n = node(v);
    return n.grad ? &*n.grad : nullptr;
}

template <class T>
Var Graph<T>::record(const char* op, Tensor<T> out, std::initializer_list<Var> inputs, BackwardFn backward) {
    return record(op, std::move(out), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
}

template <class T>
Var Graph<T>::record(const char* op, Tensor<T> out, std::span<const Var> inputs, BackwardFn backward) {
    const auto values = out.data();
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i])) {
            std::ostringstream os;
            os << "non-finite value " << values[i] << " in output of '" << op << "' at flat index " << i
               << ", output shape " << shape_str(out.shape()) << ", inputs:";
            for (auto in : inputs) {
                const auto& n = node(in);
                os << ' ' << n.op << shape_str(n.value->shape());
                if (!n.param_name.empty()) {
                    os << "(" << n.param_name << ")";
                }
            }
            throw NumericsError(os.str());
        }
    }
    bool needs = false;
    if (grad_enabled_) {
        for (auto in : inputs) {
            needs = needs || node(in).requires_grad;
        }
    }
    Node n;
    n.owned = std::move(out);
    n.requires_grad = needs;
    if (needs) {
        n.backward = std::move(backward);
    }
    n.op = op;
    return push(std::move(n));
}

template <class T>
Tensor<T>& Graph<T>::grad_buffer(Var v) {
    auto& n = node(v);
    if (!n.requires_grad) {
        throw InvalidInputError(std::string("gradient requested for non-differentiable node '") + n.op + "'");
    }
    if (!n.grad) {
        n.grad.emplace(n.value->shape());
    }
    return *n.grad;
}

template <class T>
void Graph<T>::backward(Var loss) {
    auto& root = node(loss);
    if (root.value->size() != 1) {
        throw DimensionError("backward() needs a one-element loss, got shape " + shape_str(root.value->shape()));
    }
    if (!root.requires_grad) {
        return;
    }
    grad_buffer(loss)[0] = T{1};
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        auto& n = nodes_[i];
        if (n.grad && n.backward) {
            n.backward(*this, *n.grad);
        }
    }
    for (auto& n : nodes_) {
        if (!n.param_name.empty() && n.grad) {
            store_->accumulate_grad(n.param_name, *n.grad);
        }
    }
}

// ---------------------------------------------------------------------------
// ops

template <class T>
Var matmul(Graph<T>& g, Var a, Var b) {
    const auto& A = g.value(a);
    const auto& B = g.value(b);
    require_matrix(A, "matmul");
    require_matrix(B, "matmul");
    if (A.cols() != B.rows()) {
        throw DimensionError("matmul: inner extents differ between " + shape_str(A.shape()) + " and " +
                             shape_str(B.shape()));
    }
    const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
    Tensor<T> C({m, n});
    kernels::gemm_nn<T>(A.data(), B.data(), C.data(), m, k, n, false);
    return g.record("matmul", std::move(C), {a, b}, [a, b, m, k, n](Graph<T>& g, const Tensor<T>& dC) {
        if (g.requires_grad(a)) {
            kernels::gemm_nt<T>(dC.data(), g.value(b).data(), g.grad_buffer(a).data(), m, n, k, true);
        }
        if (g.requires_grad(b)) {
            kernels::gemm_tn<T>(g.value(a).data(), dC.data(), g.grad_buffer(b).data(), m, k, n, true);
        }
    });
}

template <class T>
Var matmul_nt(Graph<T>& g, Var a, Var b) {
    const auto& A = g.value(a);
    const auto& B = g.value(b);
    require_matrix(A, "matmul_nt");
    require_matrix(B, "matmul_nt");
    if (A.cols() != B.cols()) {
        throw DimensionError("matmul_nt: inner extents differ between " + shape_str(A.shape()) + " and " +
                             shape_str(B.shape()) + "^T");
    }
    const std::size_t m = A.rows(), k = A.cols(), n = B.rows();
    Tensor<T> C({m, n});
    kernels::gemm_nt<T>(A.data(), B.data(), C.data(), m, k, n, false);
    return g.record("matmul_nt", std::move(C), {a, b}, [a, b, m, k, n](Graph<T>& g, const Tensor<T>& dC) {
        if (g.requires_grad(a)) {
            kernels::gemm_nn<T>(dC.data(), g.value(b).data(), g.grad_buffer(a).data(), m, n, k, true);
        }
        if (g.requires_grad(b)) {
            kernels::gemm_tn<T>(dC.data(), g.value(a).data(), g.grad_buffer(b).data(), m, n, k, true);
        }
    });
}

template <class T>
Var add(Graph<T>& g, Var a, Var b) {
    const auto& A = g.value(a);
    const auto& B = g.value(b);
    if (A.shape() != B.shape()) {
        throw DimensionError("add: shapes " + shape_str(A.shape()) + " and " + shape_str(B.shape()) + " differ");
    }
    Tensor<T> C = A;
    add_into<T>(C.data(), B.data());
    return g.record("add", std::move(C), {a, b}, [a, b](Graph<T>& g, const Tensor<T>& dC) {
        if (g.requires_grad(a)) {
            add_into<T>(g.grad_buffer(a).data(), dC.data());
        }
        if (g.requires_grad(b)) {
            add_into<T>(g.grad_buffer(b).data(), dC.data());
        }
    });
}

template <class T>
Var add_bias(Graph<T>& g, Var x, Var bias) {
    const auto& X = g.value(x);
    const auto& B = g.value(bias);
    if (B.rank() != 1 || B.size() != X.cols()) {
        throw DimensionError("add_bias: bias " + shape_str(B.shape()) + " does not match last axis of " +
                             shape_str(X.shape()));
    }
    Tensor<T> Y = X;
    for (std::size_t r = 0; r < Y.rows(); ++r) {
        add_into<T>(Y.row(r), B.data());
    }
    return g.record("add_bias", std::move(Y), {x, bias}, [x, bias](Graph<T>& g, const Tensor<T>& dY) {
        if (g.requires_grad(x)) {
            add_into<T>(g.grad_buffer(x).data(), dY.data());
        }
        if (g.requires_grad(bias)) {
            auto db = g.grad_buffer(bias).data();
            for (std::size_t r = 0; r < dY.rows(); ++r) {
                add_into<T>(db, dY.row(r));
            }
        }
    });
}

template <class T>
Var scale(Graph<T>& g, Var x, T factor) {
    Tensor<T> Y = g.value(x);
    for (auto& v : Y.data()) {
        v *= factor;
    }
    return g.record("scale", std::move(Y), {x}, [x, factor](Graph<T>& g, const Tensor<T>& dY) {
        auto dx = g.grad_buffer(x).data();
        auto dy = dY.data();
        for (std::size_t i = 0; i < dx.size(); ++i) {
            dx[i] += factor * dy[i];
        }
    });
}

template <class T>
Var gelu(Graph<T>& g, Var x) {
    constexpr T c = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
    constexpr T a = static_cast<T>(0.044715);
    const auto& X = g.value(x);
    Tensor<T> Y(X.shape());
    auto in = X.data();
    auto out = Y.data();
    for (std::size_t i = 0; i < in.size(); ++i) {
        const T v = in[i];
        out[i] = T(0.5) * v * (T(1) + std::tanh(c * (v + a * v * v * v)));
    }
    return g.record("gelu", std::move(Y), {x}, [x](Graph<T>& g, const Tensor<T>& dY) {
        auto in = g.value(x).data();
        auto dx = g.grad_buffer(x).data();
        auto dy = dY.data();
        for (std::size_t i = 0; i < in.size(); ++i) {
            const T v = in[i];
            const T t = std::tanh(c * (v + a * v * v * v));
            const T dt = (T(1) - t * t) * c * (T(1) + T(3) * a * v * v);
            dx[i] += dy[i] * (T(0.5) * (T(1) + t) + T(0.5) * v * dt);
        }
    });
}

template <class T>
Var layer_norm(Graph<T>& g, Var x, Var gamma, Var beta, T eps) {
    const auto& X = g.value(x);
    const auto& G = g.value(gamma);
    const auto& B = g.value(beta);
    const std::size_t d = X.cols();
    if (G.rank() != 1 || G.size() != d || B.shape() != G.shape()) {
        throw DimensionError("layer_norm: affine terms " + shape_str(G.shape()) + "/" + shape_str(B.shape()) +
                             " do not match last axis of " + shape_str(X.shape()));
    }
    const std::size_t rows = X.rows();
    Tensor<T> Y(X.shape());
    std::vector<T> xhat(X.size());
    std::vector<T> rstd(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        auto in = X.row(r);
        T mean = 0;
        for (auto v : in) {
            mean += v;
        }
        mean /= static_cast<T>(d);
        T var = 0;
        for (auto v : in) {
            var += (v - mean) * (v - mean);
        }
        var /= static_cast<T>(d);
        rstd[r] = T(1) / std::sqrt(var + eps);
        auto out = Y.row(r);
        for (std::size_t c = 0; c < d; ++c) {
            const T h = (in[c] - mean) * rstd[r];
            xhat[r * d + c] = h;
            out[c] = G[c] * h + B[c];
        }
    }
    return g.record("layer_norm", std::move(Y), {x, gamma, beta},
                    [x, gamma, beta, d, rows, xhat = std::move(xhat), rstd = std::move(rstd)](
                        Graph<T>& g, const Tensor<T>& dY) {
                        const auto& G = g.value(gamma);
                        if (g.requires_grad(gamma)) {
                            auto dg = g.grad_buffer(gamma).data();
                            for (std::size_t r = 0; r < rows; ++r) {
                                for (std::size_t c = 0; c < d; ++c) {
                                    dg[c] += dY.at(r, c) * xhat[r * d + c];
                                }
                            }
                        }
                        if (g.requires_grad(beta)) {
                            auto db = g.grad_buffer(beta).data();
                            for (std::size_t r = 0; r < rows; ++r) {
                                add_into<T>(db, dY.row(r));
                            }
                        }
                        if (g.requires_grad(x)) {
                            auto& dX = g.grad_buffer(x);
                            std::vector<T> dxhat(d);
                            for (std::size_t r = 0; r < rows; ++r) {
                                T mean_d = 0;
                                T mean_dx = 0;
                                for (std::size_t c = 0; c < d; ++c) {
                                    dxhat[c] = dY.at(r, c) * G[c];
                                    mean_d += dxhat[c];
                                    mean_dx += dxhat[c] * xhat[r * d + c];
                                }
                                mean_d /= static_cast<T>(d);
                                mean_dx /= static_cast<T>(d);
                                for (std::size_t c = 0; c < d; ++c) {
                                    dX.at(r, c) += rstd[r] * (dxhat[c] - mean_d - xhat[r * d + c] * mean_dx);
                                }
                            }
                        }
                    });
}

template <class T>
Var softmax_rows(Graph<T>& g, Var x, bool causal) {
    const auto& X = g.value(x);
    require_matrix(X, "softmax_rows");
    auto Y = kernels::softmax_rows(X, causal);
    const Var out_var{g.size()};
    return g.record("softmax_rows", std::move(Y), {x}, [x, out_var](Graph<T>& g, const Tensor<T>& dY) {
        const auto& Y = g.value(out_var);
        auto& dX = g.grad_buffer(x);
        for (std::size_t r = 0; r < Y.rows(); ++r) {
            auto y = Y.row(r);
            auto dy = dY.row(r);
            T dot = 0;
            for (std::size_t c = 0; c < y.size(); ++c) {
                dot += y[c] * dy[c];
            }
            auto dx = dX.row(r);
            for (std::size_t c = 0; c < y.size(); ++c) {
                dx[c] += y[c] * (dy[c] - dot);
            }
        }
    });
}

template <class T>
Var concat_rows(Graph<T>& g, Var top, Var bottom) {
    const auto& A = g.value(top);
    const auto& B = g.value(bottom);
    require_matrix(A, "concat_rows");
    require_matrix(B, "concat_rows");
    if (A.cols() != B.cols()) {
        throw DimensionError("concat_rows: column counts differ between " + shape_str(A.shape()) + " and " +
                             shape_str(B.shape()));
    }
    std::vector<T> data(A.storage());
    data.insert(data.end(), B.storage().begin(), B.storage().end());
    const std::size_t split = A.size();
    Tensor<T> C({A.rows() + B.rows(), A.cols()}, std::move(data));
    return g.record("concat_rows", std::move(C), {top, bottom}, [top, bottom, split](Graph<T>& g, const Tensor<T>& dC) {
        auto all = dC.data();
        if (g.requires_grad(top)) {
            add_into<T>(g.grad_buffer(top).data(), all.first(split));
        }
        if (g.requires_grad(bottom)) {
            add_into<T>(g.grad_buffer(bottom).data(), all.subspan(split));
        }
    });
}

template <class T>
Var slice_rows(Graph<T>& g, Var x, std::size_t begin, std::size_t count) {
    const auto& X = g.value(x);
    require_matrix(X, "slice_rows");
    if (count == 0 || begin + count > X.rows()) {
        throw DimensionError("slice_rows: rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                             ") out of range for " + shape_str(X.shape()));
    }
    const std::size_t cols = X.cols();
    auto src = X.data().subspan(begin * cols, count * cols);
    Tensor<T> Y({count, cols}, std::vector<T>(src.begin(), src.end()));
    return g.record("slice_rows", std::move(Y), {x}, [x, begin, cols](Graph<T>& g, const Tensor<T>& dY) {
        add_into<T>(g.grad_buffer(x).data().subspan(begin * cols, dY.size()), dY.data());
    });
}

template <class T>
Var concat_cols(Graph<T>& g, std::span<const Var> parts) {
    if (parts.empty()) {
        throw DimensionError("concat_cols: no inputs");
    }
    const std::size_t rows = g.value(parts[0]).rows();
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (auto p : parts) {
        const auto& P = g.value(p);
        require_matrix(P, "concat_cols");
        if (P.rows() != rows) {
            throw DimensionError("concat_cols: row counts differ (" + shape_str(P.shape()) + ")");
        }
        widths.push_back(P.cols());
        total += P.cols();
    }
    Tensor<T> Y({rows, total});
    std::size_t offset = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        const auto& P = g.value(parts[i]);
        for (std::size_t r = 0; r < rows; ++r) {
            std::copy(P.row(r).begin(), P.row(r).end(), Y.row(r).begin() + static_cast<std::ptrdiff_t>(offset));
        }
        offset += widths[i];
    }
    std::vector<Var> inputs(parts.begin(), parts.end());
    return g.record("concat_cols", std::move(Y), parts,
                    [inputs, widths, rows](Graph<T>& g, const Tensor<T>& dY) {
                        std::size_t offset = 0;
                        for (std::size_t i = 0; i < inputs.size(); ++i) {
                            if (g.requires_grad(inputs[i])) {
                                auto& dP = g.grad_buffer(inputs[i]);
                                for (std::size_t r = 0; r < rows; ++r) {
                                    add_into<T>(dP.row(r), dY.row(r).subspan(offset, widths[i]));
                                }
                            }
                            offset += widths[i];
                        }
                    });
}

template <class T>
Var slice_cols(Graph<T>& g, Var x, std::size_t begin, std::size_t count) {
    const auto& X = g.value(x);
    require_matrix(X, "slice_cols");
    if (count == 0 || begin + count > X.cols()) {
        throw DimensionError("slice_cols: columns [" + std::to_string(begin) + ", " +
                             std::to_string(begin + count) + ") out of range for " + shape_str(X.shape()));
    }
    Tensor<T> Y({X.rows(), count});
    for (std::size_t r = 0; r < X.rows(); ++r) {
        auto src = X.row(r).subspan(begin, count);
        std::copy(src.begin(), src.end(), Y.row(r).begin());
    }
    return g.record("slice_cols", std::move(Y), {x}, [x, begin, count](Graph<T>& g, const Tensor<T>& dY) {
        auto& dX = g.grad_buffer(x);
        for (std::size_t r = 0; r < dY.rows(); ++r) {
            add_into<T>(dX.row(r).subspan(begin, count), dY.row(r));
        }
    });
}

template <class T>
Var reshape(Graph<T>& g, Var x, Shape shape) {
    auto Y = g.value(x).reshaped(std::move(shape));
    return g.record("reshape", std::move(Y), {x}, [x](Graph<T>& g, const Tensor<T>& dY) {
        add_into<T>(g.grad_buffer(x).data(), dY.data());
    });
}

template <class T>
Var gather_rows(Graph<T>& g, Var table, std::span<const int> ids) {
    const auto& E = g.value(table);
    require_matrix(E, "gather_rows");
    if (ids.empty()) {
        throw DimensionError("gather_rows: empty id list");
    }
    const std::size_t cols = E.cols();
    Tensor<T> Y({ids.size(), cols});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= E.rows()) {
            throw DimensionError("gather_rows: id " + std::to_string(ids[i]) + " out of range for table " +
                                 shape_str(E.shape()));
        }
        auto src = E.row(static_cast<std::size_t>(ids[i]));
        std::copy(src.begin(), src.end(), Y.row(i).begin());
    }
    std::vector<int> idx(ids.begin(), ids.end());
    return g.record("gather_rows", std::move(Y), {table}, [table, idx = std::move(idx)](Graph<T>& g, const Tensor<T>& dY) {
        auto& dE = g.grad_buffer(table);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            add_into<T>(dE.row(static_cast<std::size_t>(idx[i])), dY.row(i));
        }
    });
}

template <class T>
Var cross_entropy(Graph<T>& g, Var logits, std::span<const int> targets, const std::vector<bool>& mask) {
    const auto& L = g.value(logits);
    require_matrix(L, "cross_entropy");
    const std::size_t rows = L.rows();
    const std::size_t vocab = L.cols();
    if (targets.size() != rows || mask.size() != rows) {
        throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets / " +
                             std::to_string(mask.size()) + " mask entries for logits " + shape_str(L.shape()));
    }
    std::size_t count = 0;
    for (std::size_t r = 0; r < rows; ++r) {
        if (!mask[r]) {
            continue;
        }
        if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= vocab) {
            throw DimensionError("cross_entropy: target id " + std::to_string(targets[r]) + " outside vocabulary of " +
                                 std::to_string(vocab));
        }
        ++count;
    }
    if (count == 0) {
        throw InvalidBatchError("cross_entropy: every position is masked out");
    }
    Tensor<T> probs(L.shape());
    T total = 0;
    for (std::size_t r = 0; r < rows; ++r) {
        if (!mask[r]) {
            continue;
        }
        auto in = L.row(r);
        auto p = probs.row(r);
        T mx = *std::max_element(in.begin(), in.end());
        T sum = 0;
        for (std::size_t c = 0; c < vocab; ++c) {
            p[c] = std::exp(in[c] - mx);
            sum += p[c];
        }
        for (auto& v : p) {
            v /= sum;
        }
        total += (std::log(sum) + mx) - in[static_cast<std::size_t>(targets[r])];
    }
    const T inv = T(1) / static_cast<T>(count);
    Tensor<T> out({1}, std::vector<T>{total * inv});
    std::vector<int> tgt(targets.begin(), targets.end());
    return g.record("cross_entropy", std::move(out), {logits},
                    [logits, mask, inv, tgt = std::move(tgt), probs = std::move(probs)](Graph<T>& g,
                                                                                       const Tensor<T>& dOut) {
                        auto& dL = g.grad_buffer(logits);
                        const T upstream = dOut[0] * inv;
                        for (std::size_t r = 0; r < mask.size(); ++r) {
                            if (!mask[r]) {
                                continue;
                            }
                            auto p = probs.row(r);
                            auto d = dL.row(r);
                            for (std::size_t c = 0; c < p.size(); ++c) {
                                d[c] += upstream * p[c];
                            }
                            d[static_cast<std::size_t>(tgt[r])] -= upstream;
                        }
                    });
}

template <class T>
Var mean_scalars(Graph<T>& g, std::span<const Var> scalars) {
    if (scalars.empty()) {
        throw InvalidBatchError("mean_scalars: no inputs");
    }
    T total = 0;
    for (auto s : scalars) {
        const auto& v = g.value(s);
        if (v.size() != 1) {
            throw DimensionError("mean_scalars: input of shape " + shape_str(v.shape()) + " is not a scalar");
        }
        total += v[0];
    }
    const T inv = T(1) / static_cast<T>(scalars.size());
    std::vector<Var> inputs(scalars.begin(), scalars.end());
    return g.record("mean_scalars", Tensor<T>({1}, std::vector<T>{total * inv}), scalars,
                    [inputs, inv](Graph<T>& g, const Tensor<T>& dOut) {
                        for (auto s : inputs) {
                            if (g.requires_grad(s)) {
                                g.grad_buffer(s)[0] += dOut[0] * inv;
                            }
                        }
                    });
}

template <class T>
Var sum_squares(Graph<T>& g, Var x) {
    T total = 0;
    for (auto v : g.value(x).data()) {
        total += v * v;
    }
    return g.record("sum_squares", Tensor<T>({1}, std::vector<T>{total}), {x}, [x](Graph<T>& g, const Tensor<T>& dOut) {
        auto in = g.value(x).data();
        auto dx = g.grad_buffer(x).data();
        for (std::size_t i = 0; i < in.size(); ++i) {
            dx[i] += T(2) * in[i] * dOut[0];
        }
    });
}

#define PFX_INSTANTIATE(T)                                                                                       \
    template class Graph<T>;                                                                                     \
    template Var matmul<T>(Graph<T>&, Var, Var);                                                                 \
    template Var matmul_nt<T>(Graph<T>&, Var, Var);                                                              \
    template Var add<T>(Graph<T>&, Var, Var);                                                                    \
    template Var add_bias<T>(Graph<T>&, Var, Var);                                                               \
    template Var scale<T>(Graph<T>&, Var, T);                                                                    \
    template Var gelu<T>(Graph<T>&, Var);                                                                        \
    template Var layer_norm<T>(Graph<T>&, Var, Var, Var, T);                                                     \
    template Var softmax_rows<T>(Graph<T>&, Var, bool);                                                          \
    template Var concat_rows<T>(Graph<T>&, Var, Var);                                                            \
    template Var slice_rows<T>(Graph<T>&, Var, std::size_t, std::size_t);                                        \
    template Var concat_cols<T>(Graph<T>&, std::span<const Var>);                                                \
    template Var slice_cols<T>(Graph<T>&, Var, std::size_t, std::size_t);                                        \
    template Var reshape<T>(Graph<T>&, Var, Shape);                                                              \
    template Var gather_rows<T>(Graph<T>&, Var, std::span<const int>);                                           \
    template Var cross_entropy<T>(Graph<T>&, Var, std::span<const int>, const std::vector<bool>&);               \
    template Var mean_scalars<T>(Graph<T>&, std::span<const Var>);                                               \
    template Var sum_squares<T>(Graph<T>&, Var);                                                                 \
    template void kernels::gemm_nn<T>(std::span<const T>, std::span<const T>, std::span<T>, std::size_t,         \
                                      std::size_t, std::size_t, bool);                                           \
    template void kernels::gemm_nt<T>(std::span<const T>, std::span<const T>, std::span<T>, std::size_t,         \
                                      std::size_t, std::size_t, bool);                                           \
    template void kernels::gemm_tn<T>(std::span<const T>, std::span<const T>, std::span<T>, std::size_t,         \
                                      std::size_t, std::size_t, bool);                                           \
    template Tensor<T> kernels::softmax_rows<T>(const Tensor<T>&, bool);

PFX_INSTANTIATE(float)
PFX_INSTANTIATE(double)

#undef PFX_INSTANTIATE

}  // namespace pfx
