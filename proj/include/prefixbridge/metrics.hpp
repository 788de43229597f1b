// SPDX-License-Identifier: Apache-2.0
//
// Corpus-level BLEU-1..4: clipped n-gram counts summed over the corpus,
// corpus brevity penalty, single reference, no smoothing.

#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "prefixbridge/generate.hpp"

namespace pfx {

using NGram = std::vector<std::string>;
using NGramCounts = std::map<NGram, std::size_t>;

/// Every contiguous n-gram; empty when tokens.size() < n.
NGramCounts ngram_counts(std::span<const std::string> tokens, std::size_t n);

inline constexpr std::size_t kBleuMaxOrder = 4;

struct BleuReport {
    /// Clipped matches and hypothesis n-gram totals per order.
    std::array<std::size_t, kBleuMaxOrder> matches{};
    std::array<std::size_t, kBleuMaxOrder> totals{};
    std::array<double, kBleuMaxOrder> precisions{};
    double brevity_penalty = 0.0;
    /// bleu[n-1] = BLEU-n.
    std::array<double, kBleuMaxOrder> bleu{};
    std::size_t hyp_len = 0;
    std::size_t ref_len = 0;
};

/// Throws InvalidInputError for an empty corpus or max_n outside [1, 4].
/// When the total hypothesis length is zero every score (and the brevity
/// penalty) is 0.
BleuReport corpus_bleu(std::span<const std::pair<std::string, std::string>> pairs, std::size_t max_n = kBleuMaxOrder);

/// A score in the ×100 convention with three decimals ("34.200").
std::string format_score(double value);

struct RecordOutput {
    std::string id;
    std::string hypothesis;
    std::string reference;
};

struct Evaluation {
    BleuReport bleu;
    std::vector<RecordOutput> outputs;
};

/// Decodes every record, cleans hypothesis and reference identically and
/// scores the corpus.
Evaluation evaluate_split(Checkpoint& model, std::span<const EmbeddingRecord> records, const DecodeConfig& decode);

/// "metric,value" rows: bleu1..bleu4 (×100, 3 decimals), bp, hyp_len, ref_len.
std::string bleu_csv(const BleuReport& report);
void write_hypotheses_jsonl(std::span<const RecordOutput> outputs, const std::filesystem::path& path);

}  // namespace pfx
