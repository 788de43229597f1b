// SPDX-License-Identifier: Apache-2.0

#include "prefixbridge/generate.hpp"

#include <algorithm>
#include <cmath>

namespace pfx {

void DecodeConfig::validate() const {
    if (beam_width < 1) {
        throw ConfigError("beam width must be >= 1");
    }
    if (max_len < 1) {
        throw ConfigError("max_len must be >= 1");
    }
}

namespace {

struct Session {
    Checkpoint& model;
    Tensor<float> prefix;
};

Session open_session(Checkpoint& model, std::span<const float> embedding, const DecodeConfig& config) {
    config.validate();
    if (!model.mapper) {
        throw ConfigError("checkpoint has no mapping network; train one before generating");
    }
    const auto& mapper = *model.mapper;
    if (mapper.prefix_length + 1 + config.max_len > model.lm.max_seq) {
        throw LengthError("prefix " + std::to_string(mapper.prefix_length) + " + BOS + max_len " +
                          std::to_string(config.max_len) + " exceeds max_seq " + std::to_string(model.lm.max_seq));
    }
    Graph<float> g(model.params, GradMode::Disabled);
    Tensor<float> prefix = g.value(map_embedding(g, mapper, embedding));
    return {model, std::move(prefix)};
}

/// Log-softmax of the final row for the sequence [prefix; BOS; generated].
std::vector<double> next_log_probs(Session& s, std::span<const int> generated) {
    std::vector<int> ids;
    ids.reserve(generated.size() + 1);
    ids.push_back(token_id::kBos);
    ids.insert(ids.end(), generated.begin(), generated.end());
    Graph<float> g(s.model.params, GradMode::Disabled);
    const Var logits = lm_forward(g, s.model.lm, g.constant(s.prefix), ids);
    const auto& L = g.value(logits);
    auto last = L.row(L.rows() - 1);
    const double mx = *std::max_element(last.begin(), last.end());
    double sum = 0.0;
    for (float v : last) {
        sum += std::exp(double(v) - mx);
    }
    const double lse = mx + std::log(sum);
    std::vector<double> out(last.size());
    for (std::size_t i = 0; i < last.size(); ++i) {
        out[i] = double(last[i]) - lse;
    }
    return out;
}

struct Hypothesis {
    std::vector<int> ids;
    double sum = 0.0;

    double score() const { return ids.empty() ? 0.0 : sum / static_cast<double>(ids.size()); }
};

bool better(const Hypothesis& a, const Hypothesis& b) {
    const double sa = a.score();
    const double sb = b.score();
    if (sa != sb) {
        return sa > sb;
    }
    return a.ids < b.ids;
}

DecodeResult finish(const Checkpoint& model, std::vector<int> ids, double sum) {
    DecodeResult r;
    r.score = ids.empty() ? 0.0 : sum / static_cast<double>(ids.size());
    r.text = decode(ids, model.vocab);
    r.ids = std::move(ids);
    return r;
}

}  // namespace

DecodeResult greedy_decode(Checkpoint& model, std::span<const float> embedding, const DecodeConfig& config) {
    auto session = open_session(model, embedding, config);
    std::vector<int> ids;
    double sum = 0.0;
    while (ids.size() < config.max_len) {
        const auto lp = next_log_probs(session, ids);
        // max_element returns the first maximum, i.e. the lowest id on ties.
        const auto best = static_cast<int>(std::max_element(lp.begin(), lp.end()) - lp.begin());
        sum += lp[static_cast<std::size_t>(best)];
        ids.push_back(best);
        if (best == token_id::kEos) {
            break;
        }
    }
    return finish(model, std::move(ids), sum);
}

DecodeResult beam_decode(Checkpoint& model, std::span<const float> embedding, const DecodeConfig& config) {
    auto session = open_session(model, embedding, config);
    std::vector<Hypothesis> live{Hypothesis{}};
    std::vector<Hypothesis> retired;
    std::vector<Hypothesis> candidates;
    for (std::size_t step = 0; step < config.max_len && !live.empty(); ++step) {
        candidates.clear();
        for (const auto& h : live) {
            const auto lp = next_log_probs(session, h.ids);
            for (std::size_t tok = 0; tok < lp.size(); ++tok) {
                Hypothesis c{h.ids, h.sum + lp[tok]};
                c.ids.push_back(static_cast<int>(tok));
                candidates.push_back(std::move(c));
            }
        }
        const std::size_t keep = std::min(config.beam_width, candidates.size());
        std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep),
                          candidates.end(), better);
        live.clear();
        for (std::size_t i = 0; i < keep; ++i) {
            auto& c = candidates[i];
            (c.ids.back() == token_id::kEos ? retired : live).push_back(std::move(c));
        }
    }
    const auto& pool = retired.empty() ? live : retired;
    const auto best = std::min_element(pool.begin(), pool.end(), better);
    return finish(model, best->ids, best->sum);
}

DecodeResult generate_report(Checkpoint& model, std::span<const float> embedding, const DecodeConfig& config) {
    if (config.strategy == DecodeStrategy::Beam) {
        return beam_decode(model, embedding, config);
    }
    return greedy_decode(model, embedding, config);
}

double sequence_score(Checkpoint& model, std::span<const float> embedding, std::span<const int> ids) {
    if (ids.empty()) {
        return 0.0;
    }
    DecodeConfig probe;
    probe.max_len = ids.size();
    auto session = open_session(model, embedding, probe);
    double sum = 0.0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
        sum += next_log_probs(session, ids.first(k))[static_cast<std::size_t>(ids[k])];
    }
    return sum / static_cast<double>(ids.size());
}

}  // namespace pfx
