// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference check of analytic gradients.

#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "prefixbridge/autodiff.hpp"

namespace pfx {

/// Builds a scalar loss on a fresh graph bound to the store under test.
template <class T>
using LossBuilder = std::function<Var(Graph<T>&)>;

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t probes = 0;
    std::string worst_name;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

/// Compares analytic gradients against (f(θ+eps) − f(θ−eps)) / 2eps for
/// `probe_count` scalars drawn uniformly (seeded) from the non-frozen
/// parameters. Relative error is |a−n| / max(|a|, |n|, 1e-8).
///
/// Throws DeterminismError if two baseline evaluations of `loss_fn` differ.
/// Store values are restored exactly; gradients are cleared on return.
template <class T>
GradCheckResult grad_check(const LossBuilder<T>& loss_fn, ParameterStore<T>& store, std::size_t probe_count,
                           double eps = 1e-3, std::uint64_t seed = 0x5eed);

}  // namespace pfx
