// SPDX-License-Identifier: Apache-2.0

#include "prefixbridge/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace pfx {

namespace {

template <class T>
double evaluate(const LossBuilder<T>& loss_fn, ParameterStore<T>& store) {
    Graph<T> g(store, GradMode::Disabled);
    const Var loss = loss_fn(g);
    return static_cast<double>(g.value(loss)[0]);
}

}  // namespace

template <class T>
GradCheckResult grad_check(const LossBuilder<T>& loss_fn, ParameterStore<T>& store, std::size_t probe_count,
                           double eps, std::uint64_t seed) {
    store.clear_grads();
    double baseline = 0.0;
    {
        Graph<T> g(store);
        const Var loss = loss_fn(g);
        baseline = static_cast<double>(g.value(loss)[0]);
        g.backward(loss);
    }
    if (evaluate(loss_fn, store) != baseline) {
        throw DeterminismError("grad_check: two baseline evaluations of the loss differ");
    }

    struct Slot {
        std::string name;
        std::size_t size;
    };
    std::vector<Slot> slots;
    std::size_t total = 0;
    for (const auto& [name, p] : store.entries()) {
        if (!store.is_frozen(name)) {
            slots.push_back({name, p.value.size()});
            total += p.value.size();
        }
    }

    GradCheckResult result;
    if (total == 0) {
        store.clear_grads();
        return result;
    }

    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, total - 1);
    for (std::size_t probe = 0; probe < probe_count; ++probe) {
        std::size_t flat = pick(rng);
        auto slot = slots.begin();
        while (flat >= slot->size) {
            flat -= slot->size;
            ++slot;
        }
        auto& param = store.at(slot->name);
        const double analytic = param.grad ? static_cast<double>((*param.grad)[flat]) : 0.0;

        T& theta = param.value[flat];
        const T saved = theta;
        theta = static_cast<T>(static_cast<double>(saved) + eps);
        const double up = evaluate(loss_fn, store);
        theta = static_cast<T>(static_cast<double>(saved) - eps);
        const double down = evaluate(loss_fn, store);
        theta = saved;

        const double numeric = (up - down) / (2.0 * eps);
        const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
        const double rel = std::abs(analytic - numeric) / denom;
        ++result.probes;
        if (rel > result.max_rel_error || result.probes == 1) {
            result.max_rel_error = std::max(rel, result.max_rel_error);
            result.worst_name = slot->name;
            result.worst_index = flat;
            result.worst_analytic = analytic;
            result.worst_numeric = numeric;
        }
    }
    store.clear_grads();
    return result;
}

template GradCheckResult grad_check<float>(const LossBuilder<float>&, ParameterStore<float>&, std::size_t, double,
                                           std::uint64_t);
template GradCheckResult grad_check<double>(const LossBuilder<double>&, ParameterStore<double>&, std::size_t, double,
                                            std::uint64_t);

}  // namespace pfx
