// SPDX-License-Identifier: Apache-2.0
//
// Named parameter tensors with freeze flags and Adam optimizer state.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "prefixbridge/tensor.hpp"

namespace pfx {

struct AdamHyper {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void validate() const;
    bool operator==(const AdamHyper&) const = default;
};

template <class T>
struct Parameter {
    Tensor<T> value;
    /// Present iff the parameter took part in a backward pass since the last clear.
    std::optional<Tensor<T>> grad;
};

template <class T>
struct AdamMoments {
    Tensor<T> m;
    Tensor<T> v;
};

/// Name-ordered store. Names are dotted paths ("lm.block0.attn.wq"); a name is
/// frozen when it starts with any registered frozen prefix.
template <class T>
class ParameterStore {
public:
    Tensor<T>& add(const std::string& name, Tensor<T> value);

    bool contains(std::string_view name) const;
    Parameter<T>& at(std::string_view name);
    const Parameter<T>& at(std::string_view name) const;
    Tensor<T>& value(std::string_view name) { return at(name).value; }
    const Tensor<T>& value(std::string_view name) const { return at(name).value; }

    const std::map<std::string, Parameter<T>, std::less<>>& entries() const noexcept { return entries_; }
    std::map<std::string, Parameter<T>, std::less<>>& entries() noexcept { return entries_; }

    void set_frozen(std::vector<std::string> prefixes) { frozen_ = std::move(prefixes); }
    const std::vector<std::string>& frozen_prefixes() const noexcept { return frozen_; }
    bool is_frozen(std::string_view name) const;

    void accumulate_grad(std::string_view name, const Tensor<T>& grad);
    void clear_grads();

    /// Total scalar count, optionally restricted to names starting with `prefix`.
    std::size_t numel(std::string_view prefix = {}) const;
    std::size_t trainable_numel() const;

    /// Moves every entry of `other` into this store; duplicate names are an error.
    void merge(ParameterStore&& other);

    /// Copy of the values only (no grads, no optimizer state).
    template <class U>
    ParameterStore<U> cast() const {
        ParameterStore<U> out;
        for (const auto& [name, p] : entries_) {
            out.add(name, p.value.template cast<U>());
        }
        out.set_frozen(frozen_);
        return out;
    }

    const std::map<std::string, AdamMoments<T>, std::less<>>& adam_moments() const noexcept { return moments_; }
    std::int64_t adam_steps() const noexcept { return adam_steps_; }

    template <class U>
    friend void adam_step(ParameterStore<U>& store, const AdamHyper& hyper);

private:
    std::map<std::string, Parameter<T>, std::less<>> entries_;
    std::vector<std::string> frozen_;
    std::map<std::string, AdamMoments<T>, std::less<>> moments_;
    std::int64_t adam_steps_ = 0;
};

/// One bias-corrected Adam update over non-frozen parameters, then clears all
/// gradients. Throws TrainingStateError when a non-frozen parameter has no
/// gradient.
template <class T>
void adam_step(ParameterStore<T>& store, const AdamHyper& hyper);

}  // namespace pfx
