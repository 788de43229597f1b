// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "doctest.h"
#include "prefixbridge/gradcheck.hpp"
#include "prefixbridge/lm.hpp"
#include "prefixbridge/mapper.hpp"
#include "test_support.hpp"

using namespace pfx;
using pfx::test::random_embedding;

namespace {

/// Independent tally of the mapper's tensors, grouped as in its description.
std::size_t tally(const MapperConfig& c) {
    const std::size_t d = c.d_model;
    const std::size_t projection = c.clip_dim * c.clip_length * d + c.clip_length * d;
    const std::size_t prefix = c.prefix_length * d;
    const std::size_t attention = 4 * (d * d + d);
    const std::size_t norms = 2 * 2 * d;
    const std::size_t mlp = d * 4 * d + 4 * d + 4 * d * d + d;
    return projection + prefix + c.n_layers * (attention + norms + mlp);
}

std::size_t enumerate(const MapperConfig& c) {
    std::size_t total = 0;
    const auto store = mapper_init(c, 0);
    for (const auto& [name, p] : store.entries()) {
        total += p.value.size();
    }
    return total;
}

Tensor<float> mapped(ParameterStore<float>& params, const MapperConfig& cfg, std::span<const float> e) {
    Graph<float> g(params, GradMode::Disabled);
    return g.value(map_embedding(g, cfg, e));
}

}  // namespace

TEST_SUITE("count_params") {
    TEST_CASE("documented fixture: 3600") {
        const MapperConfig cfg{8, 16, 2, 2, 1, 2};
        CHECK(count_params(cfg) == 3600);
        CHECK(enumerate(cfg) == 3600);
        CHECK(tally(cfg) == 3600);
    }

    TEST_CASE("prefix constant alone is 32") {
        const MapperConfig cfg{8, 16, 2, 2, 0, 2};
        const auto params = mapper_init(cfg, 0);
        CHECK(params.numel("mapper.prefix") == 32);
        CHECK(params.value("mapper.prefix").shape() == Shape{2, 16});
    }

    TEST_CASE("closed form equals enumeration on random configs") {
        std::mt19937_64 rng(31);
        for (int trial = 0; trial < 50; ++trial) {
            MapperConfig cfg;
            cfg.n_heads = 1 + rng() % 4;
            cfg.d_model = cfg.n_heads * (1 + rng() % 8);
            cfg.clip_dim = 1 + rng() % 40;
            cfg.clip_length = 1 + rng() % 5;
            cfg.prefix_length = 1 + rng() % 5;
            cfg.n_layers = rng() % 3;
            CHECK(count_params(cfg) == enumerate(cfg));
            CHECK(count_params(cfg) == tally(cfg));
            CHECK(count_params(cfg) == manifest_numel(mapper_manifest(cfg)));
        }
    }

    TEST_CASE("a full-width mapper is countable") {
        const MapperConfig cfg{512, 1024, 10, 10, 8, 8};
        CHECK(count_params(cfg) == tally(cfg));
        MESSAGE("mapper parameters at clip_dim=512, d_model=1024, 8 layers: " << count_params(cfg));
    }

    TEST_CASE("invalid configs") {
        CHECK_THROWS_AS(count_params(MapperConfig{8, 16, 2, 2, 1, 3}), ConfigError);
        CHECK_THROWS_AS(count_params(MapperConfig{8, 16, 0, 2, 1, 2}), ConfigError);
        CHECK_THROWS_AS(count_params(MapperConfig{8, 16, 2, 0, 1, 2}), ConfigError);
    }
}

TEST_SUITE("map_embedding") {
    const MapperConfig cfg{24, 16, 3, 2, 1, 4};

    TEST_CASE("deterministic init") {
        const auto a = mapper_init(cfg, 9);
        const auto b = mapper_init(cfg, 9);
        for (const auto& [name, p] : a.entries()) {
            CHECK(p.value == b.value(name));
        }
    }

    TEST_CASE("output shape and wrong width") {
        auto params = mapper_init(cfg, 1);
        std::mt19937_64 rng(1);
        const auto e = random_embedding(cfg.clip_dim, rng);
        CHECK(mapped(params, cfg, e).shape() == Shape{cfg.prefix_length, cfg.d_model});
        const auto wrong = random_embedding(cfg.clip_dim + 1, rng);
        CHECK_THROWS_AS(mapped(params, cfg, wrong), DimensionError);
    }

    TEST_CASE("zero layers return the prefix constant regardless of input") {
        MapperConfig zero = cfg;
        zero.n_layers = 0;
        auto params = mapper_init(zero, 2);
        std::mt19937_64 rng(2);
        for (int i = 0; i < 5; ++i) {
            const auto e = random_embedding(zero.clip_dim, rng);
            CHECK(mapped(params, zero, e) == params.value("mapper.prefix"));
        }
    }

    TEST_CASE("distinct embeddings give distinct prefixes") {
        auto params = mapper_init(cfg, 3);
        std::mt19937_64 rng(3);
        int differ = 0;
        for (int trial = 0; trial < 100; ++trial) {
            const auto a = random_embedding(cfg.clip_dim, rng);
            const auto b = random_embedding(cfg.clip_dim, rng);
            differ += mapped(params, cfg, a) == mapped(params, cfg, b) ? 0 : 1;
        }
        CHECK(differ >= 99);
    }

    TEST_CASE("gradients reach the mapper through a frozen LM") {
        const LMConfig lm{10, cfg.d_model, 1, 2, 16};
        auto params = lm_init(lm, 4);
        params.merge(mapper_init(cfg, 5));
        params.set_frozen({"lm."});
        std::mt19937_64 rng(4);
        const auto e = random_embedding(cfg.clip_dim, rng);
        const std::vector<int> ids{1, 5, 6, 7, 2};

        Graph<float> g(params);
        const Var prefix = map_embedding(g, cfg, e);
        const Var loss = sequence_loss(g, lm, prefix, ids);
        g.backward(loss);
        double norm = 0.0;
        for (const auto& [name, p] : params.entries()) {
            if (name.rfind("lm.", 0) == 0) {
                CHECK(!p.grad.has_value());
            } else {
                REQUIRE(p.grad.has_value());
                for (float v : p.grad->storage()) {
                    norm += static_cast<double>(v) * v;
                }
            }
        }
        CHECK(norm > 0.0);
    }

    TEST_CASE("mapper gradients pass the finite-difference check") {
        const LMConfig lm{10, cfg.d_model, 1, 2, 16};
        auto params = lm_init(lm, 6);
        params.merge(mapper_init(cfg, 7));
        // Narrow layer norms curve sharply; a 1e-4 step keeps truncation
        // error well under the tolerance.
        auto dparams = params.cast<double>();
        dparams.set_frozen({"lm."});
        std::mt19937_64 rng(6);
        const auto e = random_embedding(cfg.clip_dim, rng);
        const std::vector<int> ids{1, 4, 8, 3, 2};
        const auto result = grad_check<double>(
            [&](Graph<double>& g) { return sequence_loss<double>(g, lm, map_embedding<double>(g, cfg, e), ids); },
            dparams, 200, 1e-4);
        CHECK(result.max_rel_error < 1e-4);
    }
}
