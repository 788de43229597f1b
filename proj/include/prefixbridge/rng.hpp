// SPDX-License-Identifier: Apache-2.0
//
// Seed mixing. Every generator in the project is a std::mt19937_64 whose
// seed passes through splitmix64 first.

#pragma once

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

namespace pfx {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Per-item seed derived from a run seed and an index.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
    return splitmix64(splitmix64(seed) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

/// 0..n-1, Fisher-Yates shuffled by a generator seeded from (seed, epoch)
/// when `shuffle` is set.
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch, bool shuffle) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (!shuffle || n < 2) {
        return order;
    }
    std::mt19937_64 rng(derive_seed(seed, 0x5a0000 + epoch));
    for (std::size_t i = n - 1; i > 0; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i);
        std::swap(order[i], order[pick(rng)]);
    }
    return order;
}

}  // namespace pfx
