// SPDX-License-Identifier: Apache-2.0

#include "prefixbridge/params.hpp"

#include <cmath>
#include <sstream>

namespace pfx {

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "x" : "") << shape[i];
    }
    os << ']';
    return os.str();
}

void AdamHyper::validate() const {
    if (!(lr > 0.0) || !(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0) || !(eps > 0.0)) {
        throw ConfigError("adam hyperparameters out of range (lr > 0, beta in (0,1), eps > 0)");
    }
}

template <class T>
Tensor<T>& ParameterStore<T>::add(const std::string& name, Tensor<T> value) {
    auto [it, inserted] = entries_.try_emplace(name, Parameter<T>{std::move(value), std::nullopt});
    if (!inserted) {
        throw ConfigError("duplicate parameter name '" + name + "'");
    }
    return it->second.value;
}

template <class T>
bool ParameterStore<T>::contains(std::string_view name) const {
    return entries_.find(name) != entries_.end();
}

template <class T>
Parameter<T>& ParameterStore<T>::at(std::string_view name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) {
        throw ConfigError("unknown parameter '" + std::string(name) + "'");
    }
    return it->second;
}

template <class T>
const Parameter<T>& ParameterStore<T>::at(std::string_view name) const {
    return const_cast<ParameterStore*>(this)->at(name);
}

template <class T>
bool ParameterStore<T>::is_frozen(std::string_view name) const {
    for (const auto& prefix : frozen_) {
        if (name.starts_with(prefix)) {
            return true;
        }
    }
    return false;
}

template <class T>
void ParameterStore<T>::accumulate_grad(std::string_view name, const Tensor<T>& grad) {
    auto& p = at(name);
    if (grad.shape() != p.value.shape()) {
        throw DimensionError("gradient shape " + shape_str(grad.shape()) + " does not match parameter '" +
                             std::string(name) + "' of shape " + shape_str(p.value.shape()));
    }
    if (!p.grad) {
        p.grad = grad;
        return;
    }
    auto dst = p.grad->data();
    auto src = grad.data();
    for (std::size_t i = 0; i < dst.size(); ++i) {
        dst[i] += src[i];
    }
}

template <class T>
void ParameterStore<T>::clear_grads() {
    for (auto& [name, p] : entries_) {
        p.grad.reset();
    }
}

template <class T>
std::size_t ParameterStore<T>::numel(std::string_view prefix) const {
    std::size_t total = 0;
    for (const auto& [name, p] : entries_) {
        if (std::string_view(name).starts_with(prefix)) {
            total += p.value.size();
        }
    }
    return total;
}

template <class T>
std::size_t ParameterStore<T>::trainable_numel() const {
    std::size_t total = 0;
    for (const auto& [name, p] : entries_) {
        if (!is_frozen(name)) {
            total += p.value.size();
        }
    }
    return total;
}

template <class T>
void ParameterStore<T>::merge(ParameterStore&& other) {
    for (auto& [name, p] : other.entries_) {
        add(name, std::move(p.value));
    }
    other.entries_.clear();
}

template <class T>
void adam_step(ParameterStore<T>& store, const AdamHyper& hyper) {
    for (const auto& [name, p] : store.entries_) {
        if (!store.is_frozen(name) && !p.grad) {
            throw TrainingStateError("missing gradient for trainable parameter '" + name + "'");
        }
    }
    // Moments only ever exist for parameters that are trainable right now.
    std::erase_if(store.moments_, [&](const auto& kv) { return store.is_frozen(kv.first); });

    ++store.adam_steps_;
    const auto t = static_cast<double>(store.adam_steps_);
    const T b1 = static_cast<T>(hyper.beta1);
    const T b2 = static_cast<T>(hyper.beta2);
    const T correction1 = static_cast<T>(1.0 - std::pow(hyper.beta1, t));
    const T correction2 = static_cast<T>(1.0 - std::pow(hyper.beta2, t));
    const T lr = static_cast<T>(hyper.lr);
    const T eps = static_cast<T>(hyper.eps);

    for (auto& [name, p] : store.entries_) {
        if (store.is_frozen(name)) {
            continue;
        }
        auto [it, fresh] = store.moments_.try_emplace(name);
        if (fresh) {
            it->second.m = Tensor<T>(p.value.shape());
            it->second.v = Tensor<T>(p.value.shape());
        }
        auto theta = p.value.data();
        auto g = p.grad->data();
        auto m = it->second.m.data();
        auto v = it->second.v.data();
        for (std::size_t i = 0; i < theta.size(); ++i) {
            m[i] = b1 * m[i] + (T(1) - b1) * g[i];
            v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
            const T m_hat = m[i] / correction1;
            const T v_hat = v[i] / correction2;
            theta[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
        }
    }
    store.clear_grads();
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template void adam_step<float>(ParameterStore<float>&, const AdamHyper&);
template void adam_step<double>(ParameterStore<double>&, const AdamHyper&);

}  // namespace pfx
