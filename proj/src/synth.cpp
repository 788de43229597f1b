// SPDX-License-Identifier: Apache-2.0

#include "prefixbridge/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "prefixbridge/errors.hpp"

namespace pfx {

const std::vector<std::string>& default_finding_names() {
    static const std::vector<std::string> names = {"cardiomegaly", "edema",        "consolidation", "atelectasis",
                                                   "effusion",     "pneumothorax", "fracture",      "opacity"};
    return names;
}

namespace {

void normalize(std::vector<double>& v) {
    double norm = 0.0;
    for (double x : v) {
        norm += x * x;
    }
    norm = std::sqrt(norm);
    for (double& x : v) {
        x /= norm;
    }
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

}  // namespace

std::vector<float> FindingBasis::vector_f32(std::size_t i) const {
    return {vectors.at(i).begin(), vectors.at(i).end()};
}

std::size_t FindingBasis::nearest(std::span<const float> e) const {
    std::size_t best = 0;
    double best_cos = -2.0;
    double enorm = 0.0;
    for (float x : e) {
        enorm += double(x) * double(x);
    }
    enorm = std::sqrt(enorm);
    for (std::size_t i = 0; i < vectors.size(); ++i) {
        double dot = 0.0;
        for (std::size_t d = 0; d < e.size(); ++d) {
            dot += vectors[i][d] * double(e[d]);
        }
        const double c = dot / enorm;
        if (c > best_cos) {
            best_cos = c;
            best = i;
        }
    }
    return best;
}

FindingBasis gen_basis(std::uint64_t seed, std::size_t k, std::size_t clip_dim) {
    if (k < 1 || clip_dim < 1) {
        throw ConfigError("gen_basis needs K >= 1 and clip_dim >= 1");
    }
    FindingBasis basis;
    basis.seed = seed;
    const auto& defaults = default_finding_names();
    for (std::size_t i = 0; i < k; ++i) {
        basis.names.push_back(i < defaults.size() ? defaults[i] : "finding" + std::to_string(i));
    }

    std::mt19937_64 rng(splitmix64(seed));
    std::normal_distribution<double> normal(0.0, 1.0);
    constexpr int kMaxAttempts = 100;
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        basis.vectors.assign(k, std::vector<double>(clip_dim));
        for (auto& v : basis.vectors) {
            for (auto& x : v) {
                x = normal(rng);
            }
            normalize(v);
        }
        bool ok = true;
        for (std::size_t i = 0; i < k && ok; ++i) {
            for (std::size_t j = i + 1; j < k && ok; ++j) {
                ok = std::abs(cosine(basis.vectors[i], basis.vectors[j])) < 0.99;
            }
        }
        if (ok) {
            return basis;
        }
    }
    throw DegenerateBasisError("could not draw " + std::to_string(k) + " non-collinear vectors in " +
                               std::to_string(clip_dim) + " dimensions after " + std::to_string(kMaxAttempts) +
                               " attempts");
}

void SynthConfig::validate() const {
    if (basis.size() == 0) {
        throw ConfigError("synth config has an empty finding basis");
    }
    if (!(noise_sigma >= 0.0)) {
        throw ConfigError("noise_sigma must be >= 0");
    }
    if (max_findings_per_sample < 1 || max_findings_per_sample > basis.size()) {
        throw ConfigError("max_findings_per_sample must lie in [1, K]");
    }
}

std::string synth_report(const std::vector<std::size_t>& findings, const FindingBasis& basis) {
    std::vector<std::size_t> sorted(findings);
    std::sort(sorted.begin(), sorted.end());
    std::string report = "findings consistent with ";
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        if (i) {
            report += " and ";
        }
        report += basis.names.at(sorted[i]);
    }
    report += " .";
    return report;
}

EmbeddingRecord synth_record(const std::vector<std::size_t>& findings, const SynthConfig& config,
                             std::uint64_t sample_seed, std::string id) {
    if (findings.empty()) {
        throw InvalidSampleError("a synthetic sample needs at least one finding");
    }
    if (findings.size() > config.max_findings_per_sample) {
        throw InvalidSampleError("sample has " + std::to_string(findings.size()) + " findings, limit is " +
                                 std::to_string(config.max_findings_per_sample));
    }
    std::vector<std::size_t> sorted(findings);
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
        throw InvalidSampleError("duplicate finding in sample");
    }
    for (auto f : sorted) {
        if (f >= config.basis.size()) {
            throw InvalidSampleError("finding index " + std::to_string(f) + " outside basis");
        }
    }

    const std::size_t dim = config.basis.dim();
    std::vector<double> e(dim, 0.0);
    for (auto f : sorted) {
        const auto& b = config.basis.vectors[f];
        for (std::size_t d = 0; d < dim; ++d) {
            e[d] += b[d];
        }
    }
    std::mt19937_64 rng(sample_seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& x : e) {
        x += config.noise_sigma * normal(rng);
    }
    normalize(e);

    EmbeddingRecord r;
    r.id = std::move(id);
    r.view = (sample_seed % 2 == 0) ? View{ViewKind::AP, "AP"} : View{ViewKind::PA, "PA"};
    r.embedding.assign(e.begin(), e.end());
    r.report = synth_report(sorted, config.basis);
    return r;
}

std::vector<std::size_t> sample_findings(const SynthConfig& config, std::uint64_t sample_seed) {
    const std::size_t k = config.basis.size();
    const std::size_t max_size = config.max_findings_per_sample;
    // Subset sizes weighted by C(K, s) make every subset equally likely.
    std::vector<double> weights;
    double c = 1.0;
    for (std::size_t s = 1; s <= max_size; ++s) {
        c = c * static_cast<double>(k - s + 1) / static_cast<double>(s);
        weights.push_back(c);
    }
    std::mt19937_64 rng(derive_seed(sample_seed, 0xf1d));
    std::discrete_distribution<std::size_t> size_dist(weights.begin(), weights.end());
    const std::size_t size = size_dist(rng) + 1;

    std::vector<std::size_t> pool(k);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    for (std::size_t i = 0; i < size; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, k - 1);
        std::swap(pool[i], pool[pick(rng)]);
    }
    pool.resize(size);
    std::sort(pool.begin(), pool.end());
    return pool;
}

SplitSet gen_split(std::size_t n_train, std::size_t n_val, std::size_t n_test, const SynthConfig& config,
                   std::uint64_t seed) {
    config.validate();
    SplitSet split;
    std::uint64_t index = 0;
    auto fill = [&](std::vector<EmbeddingRecord>& out, std::size_t n, const char* name) {
        out.reserve(n);
        for (std::size_t i = 0; i < n; ++i, ++index) {
            const std::uint64_t sample_seed = derive_seed(seed, index);
            char id[64];
            std::snprintf(id, sizeof(id), "synth-%s-%04zu", name, i + 1);
            out.push_back(synth_record(sample_findings(config, sample_seed), config, sample_seed, id));
        }
    };
    fill(split.train, n_train, "train");
    fill(split.val, n_val, "val");
    fill(split.test, n_test, "test");
    return split;
}

}  // namespace pfx
