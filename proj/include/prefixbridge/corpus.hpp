// SPDX-License-Identifier: Apache-2.0
//
// Report preprocessing, vocabulary, tokenization and the JSONL dataset format.

#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace pfx {

/// Vision embedding width produced by the CLIP-family encoder.
inline constexpr std::size_t kDefaultClipDim = 512;

/// Reference sizes of the MIMIC-CXR AP/PA report corpus (documentation only;
/// the data itself is credentialed and never read by this project).
inline constexpr std::size_t kMimicApPaPairs = 243'334;
inline constexpr std::size_t kMimicTrainPairs = 237'972;
inline constexpr std::size_t kMimicValPairs = 1'959;
inline constexpr std::size_t kMimicTestPairs = 3'403;

enum class ViewKind { AP, PA, Other };

struct View {
    ViewKind kind = ViewKind::Other;
    std::string label;  // original spelling, kept for Other

    static View parse(std::string_view text);
    std::string str() const;
    bool operator==(const View&) const = default;
};

struct EmbeddingRecord {
    std::string id;
    View view;
    std::vector<float> embedding;
    std::string report;

    bool operator==(const EmbeddingRecord&) const = default;
};

struct SplitSet {
    std::vector<EmbeddingRecord> train;
    std::vector<EmbeddingRecord> val;
    std::vector<EmbeddingRecord> test;

    std::size_t size() const { return train.size() + val.size() + test.size(); }
    /// Throws InvalidCorpusError if an id appears in more than one split.
    void check_disjoint() const;
    bool operator==(const SplitSet&) const = default;
};

namespace token_id {
inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kUnk = 3;
inline constexpr int kReserved = 4;
}  // namespace token_id

class Vocabulary {
public:
    /// Reserved entries only.
    Vocabulary();
    /// `corpus_tokens` take ids 4, 5, ... in order. Duplicates are rejected.
    explicit Vocabulary(std::vector<std::string> corpus_tokens);

    int id(std::string_view token) const;
    const std::string& token(int id) const;
    std::size_t size() const noexcept { return tokens_.size(); }
    const std::vector<std::string>& tokens() const noexcept { return tokens_; }
    std::vector<std::string> corpus_tokens() const;

    static bool is_reserved(int id) noexcept { return id >= 0 && id < token_id::kReserved; }

    bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

/// Lowercases, drops every character outside [a-z0-9 .], collapses whitespace
/// and trims. Never throws; may return an empty string.
std::string clean_text(std::string_view raw);

/// clean_text() that rejects an empty result with EmptyReportError.
std::string preprocess_report(std::string_view raw);

std::vector<std::string> split_tokens(std::string_view text);

/// Keeps AP/PA records, first occurrence of each id.
std::vector<EmbeddingRecord> filter_views(std::vector<EmbeddingRecord> records);

/// Whitespace tokens with frequency >= min_freq ordered by (frequency desc,
/// token asc). Throws InvalidCorpusError on an empty corpus.
Vocabulary build_vocab(std::span<const std::string> reports, int min_freq = 1);

/// BOS, token ids (UNK when out of vocabulary), EOS.
std::vector<int> encode(std::string_view text, const Vocabulary& vocab);
/// Drops reserved ids and joins the rest with single spaces.
std::string decode(std::span<const int> ids, const Vocabulary& vocab);

// --- files -----------------------------------------------------------------

/// One JSON object per line: {"id", "view", "embedding", "report"}. Reports
/// are preprocessed on read. With `require_report == false` a missing report
/// is accepted (generation inputs). Malformed lines raise ParseError with the
/// 1-based line number; embedding width mismatches raise DimensionError.
std::vector<EmbeddingRecord> read_records(const std::filesystem::path& path, std::size_t clip_dim,
                                          bool require_report = true);
void write_records(std::span<const EmbeddingRecord> records, const std::filesystem::path& path);

/// A dataset is a directory holding train.jsonl, val.jsonl and test.jsonl;
/// a missing file is an empty split. Records are view-filtered on load.
SplitSet load_dataset(const std::filesystem::path& dir, std::size_t clip_dim = kDefaultClipDim);
void save_dataset(const SplitSet& split, const std::filesystem::path& dir);

/// One corpus token per line; line n holds id n + 4.
void save_vocab(const Vocabulary& vocab, const std::filesystem::path& path);
Vocabulary load_vocab(const std::filesystem::path& path);

}  // namespace pfx
