// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <cstring>

#include "doctest.h"
#include "prefixbridge/gradcheck.hpp"
#include "prefixbridge/lm.hpp"
#include "test_support.hpp"

using namespace pfx;
using pfx::test::random_tensor;

namespace {

LMConfig small_lm(std::size_t vocab = 12) { return LMConfig{vocab, 16, 2, 4, 24}; }

std::vector<int> random_ids(std::size_t n, std::size_t vocab, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> pick(0, static_cast<int>(vocab) - 1);
    std::vector<int> ids(n);
    for (auto& id : ids) {
        id = pick(rng);
    }
    return ids;
}

Tensor<float> logits_of(ParameterStore<float>& params, const LMConfig& cfg, std::span<const int> ids,
                        const Tensor<float>* prefix = nullptr) {
    Graph<float> g(params, GradMode::Disabled);
    std::optional<Var> p;
    if (prefix != nullptr) {
        p = g.constant(*prefix);
    }
    return g.value(lm_forward(g, cfg, p, ids));
}

bool rows_bitwise_equal(const Tensor<float>& a, const Tensor<float>& b, std::size_t row) {
    return std::memcmp(a.row(row).data(), b.row(row).data(), a.cols() * sizeof(float)) == 0;
}

}  // namespace

TEST_SUITE("lm_init") {
    TEST_CASE("same seed gives bitwise identical parameters") {
        const auto cfg = small_lm();
        const auto a = lm_init(cfg, 5);
        const auto b = lm_init(cfg, 5);
        for (const auto& [name, p] : a.entries()) {
            CHECK(p.value == b.value(name));
        }
        CHECK(!(lm_init(cfg, 6).value("lm.tok_emb") == a.value("lm.tok_emb")));
    }

    TEST_CASE("indivisible head count is a config error") {
        LMConfig cfg{10, 64, 2, 5, 32};
        CHECK_THROWS_AS(lm_init(cfg, 1), ConfigError);
    }

    TEST_CASE("parameter count: closed form, enumeration and manifest agree") {
        for (const LMConfig cfg : {LMConfig{20, 64, 2, 4, 128}, LMConfig{7, 8, 3, 2, 10}, LMConfig{50, 32, 1, 1, 16}}) {
            const std::size_t d = cfg.d_model;
            // Embeddings, then per block: 4 attention matrices + biases, MLP
            // d->4d->d with biases, two norms; then the final norm.
            const std::size_t per_block = 4 * (d * d + d) + (d * 4 * d + 4 * d) + (4 * d * d + d) + 2 * 2 * d;
            const std::size_t expected = cfg.vocab_size * d + cfg.max_seq * d + cfg.n_layers * per_block + 2 * d;
            CHECK(lm_param_count(cfg) == expected);
            CHECK(lm_init(cfg, 0).numel() == expected);
            CHECK(manifest_numel(lm_manifest(cfg)) == expected);
        }
    }

    TEST_CASE("biases start at zero and norm gains at one") {
        const auto p = lm_init(small_lm(), 3);
        for (float v : p.value("lm.block0.attn.bq").storage()) {
            CHECK(v == 0.0f);
        }
        for (float v : p.value("lm.ln_f.gamma").storage()) {
            CHECK(v == 1.0f);
        }
    }
}

TEST_SUITE("lm_forward") {
    TEST_CASE("shapes with and without a prefix") {
        const auto cfg = small_lm();
        auto params = lm_init(cfg, 1);
        std::mt19937_64 rng(1);
        const auto ids = random_ids(5, cfg.vocab_size, rng);
        const auto logits = logits_of(params, cfg, ids);
        CHECK(logits.shape() == Shape{5, cfg.vocab_size});
        const auto prefix = random_tensor<float>({3, cfg.d_model}, rng);
        CHECK(logits_of(params, cfg, ids, &prefix).shape() == Shape{8, cfg.vocab_size});
    }

    TEST_CASE("overflowing max_seq is a length error") {
        const auto cfg = small_lm();
        auto params = lm_init(cfg, 1);
        const std::vector<int> ids(cfg.max_seq + 1, 4);
        CHECK_THROWS_AS(logits_of(params, cfg, ids), LengthError);
        std::mt19937_64 rng(2);
        const auto prefix = random_tensor<float>({2, cfg.d_model}, rng);
        const std::vector<int> fits(cfg.max_seq - 1, 4);
        CHECK_THROWS_AS(logits_of(params, cfg, fits, &prefix), LengthError);
    }

    TEST_CASE("causal: changing a later token never changes earlier logits") {
        const auto cfg = small_lm();
        auto params = lm_init(cfg, 8);
        std::mt19937_64 rng(8);
        for (int probe = 0; probe < 50; ++probe) {
            const std::size_t n = 2 + rng() % (cfg.max_seq - 2);
            auto ids = random_ids(n, cfg.vocab_size, rng);
            const std::size_t j = 1 + rng() % (n - 1);
            const auto before = logits_of(params, cfg, ids);
            ids[j] = (ids[j] + 1 + static_cast<int>(rng() % (cfg.vocab_size - 1))) % static_cast<int>(cfg.vocab_size);
            const auto after = logits_of(params, cfg, ids);
            for (std::size_t i = 0; i < j; ++i) {
                CHECK(rows_bitwise_equal(before, after, i));
            }
            CHECK(!rows_bitwise_equal(before, after, j));
        }
    }

    TEST_CASE("attention rows are probability distributions") {
        const auto cfg = small_lm();
        auto params = lm_init(cfg, 4);
        std::mt19937_64 rng(4);
        const auto ids = random_ids(9, cfg.vocab_size, rng);
        const auto prefix = random_tensor<float>({2, cfg.d_model}, rng);
        Graph<float> g(params, GradMode::Disabled);
        std::vector<Var> probs;
        lm_forward(g, cfg, g.constant(prefix), ids, &probs);
        CHECK(probs.size() == cfg.n_layers * cfg.n_heads);
        for (const Var p : probs) {
            const auto& t = g.value(p);
            for (std::size_t r = 0; r < t.rows(); ++r) {
                double sum = 0.0;
                for (std::size_t c = 0; c < t.cols(); ++c) {
                    sum += t.at(r, c);
                    if (c > r) {
                        CHECK(t.at(r, c) == 0.0f);
                    }
                }
                CHECK(std::abs(sum - 1.0) <= 1e-6);
            }
        }
    }

    TEST_CASE("distinct prefixes change the first token position") {
        const auto cfg = small_lm();
        auto params = lm_init(cfg, 6);
        std::mt19937_64 rng(6);
        const auto ids = random_ids(6, cfg.vocab_size, rng);
        int differ = 0;
        for (int trial = 0; trial < 100; ++trial) {
            const auto a = random_tensor<float>({2, cfg.d_model}, rng);
            const auto b = random_tensor<float>({2, cfg.d_model}, rng);
            if (!rows_bitwise_equal(logits_of(params, cfg, ids, &a), logits_of(params, cfg, ids, &b), 2)) {
                ++differ;
            }
        }
        CHECK(differ >= 99);
    }

    TEST_CASE("untrained loss is close to ln V") {
        const LMConfig cfg{40, 64, 2, 4, 32};
        auto params = lm_init(cfg, 2);
        std::mt19937_64 rng(2);
        std::vector<std::vector<int>> seqs;
        for (int i = 0; i < 8; ++i) {
            seqs.push_back(random_ids(12, cfg.vocab_size, rng));
        }
        const double loss = lm_corpus_loss(params, cfg, seqs);
        CHECK(std::abs(loss - std::log(40.0)) <= 0.05 * std::log(40.0));
    }

    TEST_CASE("gradients of every LM tensor pass the finite-difference check") {
        const LMConfig cfg{9, 16, 2, 2, 12};
        // Layer norm over a narrow width curves sharply; a 1e-3 step leaves
        // truncation error near 5e-3 on position embeddings, 1e-4 does not.
        auto params = lm_init(cfg, 13).cast<double>();
        std::mt19937_64 rng(13);
        const auto a = random_ids(7, cfg.vocab_size, rng);
        const auto b = random_ids(5, cfg.vocab_size, rng);
        const auto result = grad_check<double>(
            [&](Graph<double>& g) {
                const std::vector<Var> losses{sequence_loss<double>(g, cfg, std::nullopt, a),
                                              sequence_loss<double>(g, cfg, std::nullopt, b)};
                return mean_scalars<double>(g, losses);
            },
            params, 300, 1e-4);
        INFO(result.worst_name, "[", result.worst_index, "] analytic ", result.worst_analytic, " numeric ",
             result.worst_numeric);
        CHECK(result.max_rel_error < 1e-4);
    }
}

TEST_SUITE("lm_pretrain") {
    const std::vector<std::string> corpus{"findings consistent with edema .", "findings consistent with effusion .",
                                          "findings consistent with edema and effusion ."};

    TEST_CASE("one epoch on one report lowers the loss") {
        const std::vector<std::string> one{corpus[0]};
        const auto vocab = build_vocab(one);
        const LMConfig cfg{vocab.size(), 16, 1, 2, 16};
        PretrainConfig pc;
        pc.epochs = 1;
        pc.batch_size = 1;
        // A single report makes a single step per epoch; repeat it so the
        // first and last steps differ.
        const std::vector<std::string> repeated(4, corpus[0]);
        const auto result = lm_pretrain(repeated, vocab, cfg, pc);
        REQUIRE(result.step_losses.size() == 4);
        CHECK(result.step_losses.back() < result.step_losses.front());
    }

    TEST_CASE("final epoch loss is below the first") {
        const auto vocab = build_vocab(corpus);
        const LMConfig cfg{vocab.size(), 16, 1, 2, 16};
        PretrainConfig pc;
        pc.epochs = 5;
        pc.batch_size = 2;
        const auto result = lm_pretrain(corpus, vocab, cfg, pc);
        CHECK(result.epoch_losses.back() < result.epoch_losses.front());
    }

    TEST_CASE("zero epochs returns the initialization") {
        const auto vocab = build_vocab(corpus);
        const LMConfig cfg{vocab.size(), 16, 1, 2, 16};
        PretrainConfig pc;
        pc.epochs = 0;
        pc.seed = 4;
        const auto result = lm_pretrain(corpus, vocab, cfg, pc);
        const auto init = lm_init(cfg, derive_seed(4, 1));
        for (const auto& [name, p] : init.entries()) {
            CHECK(result.params.value(name) == p.value);
        }
    }

    TEST_CASE("deterministic for identical inputs") {
        const auto vocab = build_vocab(corpus);
        const LMConfig cfg{vocab.size(), 16, 1, 2, 16};
        PretrainConfig pc;
        pc.epochs = 3;
        pc.max_position_offset = 4;
        const auto a = lm_pretrain(corpus, vocab, cfg, pc);
        const auto b = lm_pretrain(corpus, vocab, cfg, pc);
        CHECK(a.final_loss == b.final_loss);
        CHECK(a.step_losses == b.step_losses);
    }

    TEST_CASE("empty corpus and mismatched vocabulary are rejected") {
        const auto vocab = build_vocab(corpus);
        const LMConfig cfg{vocab.size(), 16, 1, 2, 16};
        CHECK_THROWS_AS(lm_pretrain(std::vector<std::string>{}, vocab, cfg, PretrainConfig{}), InvalidCorpusError);
        LMConfig wrong = cfg;
        wrong.vocab_size += 1;
        CHECK_THROWS_AS(lm_pretrain(corpus, vocab, wrong, PretrainConfig{}), ConfigError);
    }
}
