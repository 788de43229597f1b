// SPDX-License-Identifier: Apache-2.0

#include "prefixbridge/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <unordered_set>

#include "json.hpp"

#include "prefixbridge/errors.hpp"

namespace pfx {

using json = nlohmann::json;

View View::parse(std::string_view text) {
    std::string upper(text);
    std::transform(upper.begin(), upper.end(), upper.begin(), [](unsigned char c) { return std::toupper(c); });
    if (upper == "AP") {
        return {ViewKind::AP, "AP"};
    }
    if (upper == "PA") {
        return {ViewKind::PA, "PA"};
    }
    return {ViewKind::Other, std::string(text)};
}

std::string View::str() const {
    switch (kind) {
        case ViewKind::AP:
            return "AP";
        case ViewKind::PA:
            return "PA";
        case ViewKind::Other:
            break;
    }
    return label;
}

void SplitSet::check_disjoint() const {
    std::unordered_set<std::string> seen;
    for (const auto* part : {&train, &val, &test}) {
        std::unordered_set<std::string> local;
        for (const auto& r : *part) {
            local.insert(r.id);
        }
        for (const auto& id : local) {
            if (!seen.insert(id).second) {
                throw InvalidCorpusError("record id '" + id + "' appears in more than one split");
            }
        }
    }
}

// ---------------------------------------------------------------------------

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(std::vector<std::string> corpus_tokens) {
    tokens_ = {"<pad>", "<bos>", "<eos>", "<unk>"};
    tokens_.insert(tokens_.end(), std::make_move_iterator(corpus_tokens.begin()),
                   std::make_move_iterator(corpus_tokens.end()));
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        if (!index_.emplace(tokens_[i], static_cast<int>(i)).second) {
            throw InvalidCorpusError("duplicate vocabulary token '" + tokens_[i] + "'");
        }
    }
}

int Vocabulary::id(std::string_view token) const {
    auto it = index_.find(std::string(token));
    if (it == index_.end() || is_reserved(it->second)) {
        return token_id::kUnk;
    }
    return it->second;
}

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
        throw InvalidInputError("token id " + std::to_string(id) + " outside vocabulary of " +
                                std::to_string(tokens_.size()));
    }
    return tokens_[static_cast<std::size_t>(id)];
}

std::vector<std::string> Vocabulary::corpus_tokens() const {
    return {tokens_.begin() + token_id::kReserved, tokens_.end()};
}

// ---------------------------------------------------------------------------

std::string clean_text(std::string_view raw) {
    std::string out;
    out.reserve(raw.size());
    bool pending_space = false;
    for (unsigned char c : raw) {
        if (c >= 'A' && c <= 'Z') {
            c = static_cast<unsigned char>(c - 'A' + 'a');
        }
        if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') {
            pending_space = !out.empty();
            continue;
        }
        const bool keep = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '.';
        if (!keep) {
            continue;
        }
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        out.push_back(static_cast<char>(c));
    }
    return out;
}

std::string preprocess_report(std::string_view raw) {
    auto cleaned = clean_text(raw);
    if (cleaned.empty()) {
        throw EmptyReportError("report is empty after preprocessing");
    }
    return cleaned;
}

std::vector<std::string> split_tokens(std::string_view text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && text[i] == ' ') {
            ++i;
        }
        const std::size_t start = i;
        while (i < text.size() && text[i] != ' ') {
            ++i;
        }
        if (i > start) {
            out.emplace_back(text.substr(start, i - start));
        }
    }
    return out;
}

std::vector<EmbeddingRecord> filter_views(std::vector<EmbeddingRecord> records) {
    std::vector<EmbeddingRecord> kept;
    std::unordered_set<std::string> ids;
    for (auto& r : records) {
        if (r.view.kind == ViewKind::Other) {
            continue;
        }
        if (ids.insert(r.id).second) {
            kept.push_back(std::move(r));
        }
    }
    return kept;
}

namespace {

bool reserved_spelling(const std::string& tok) {
    return tok == "<pad>" || tok == "<bos>" || tok == "<eos>" || tok == "<unk>";
}

}  // namespace

Vocabulary build_vocab(std::span<const std::string> reports, int min_freq) {
    if (min_freq < 1) {
        throw ConfigError("min_freq must be >= 1");
    }
    if (reports.empty()) {
        throw InvalidCorpusError("cannot build a vocabulary from an empty corpus");
    }
    std::map<std::string, std::size_t> freq;
    for (const auto& r : reports) {
        for (auto& t : split_tokens(r)) {
            ++freq[std::move(t)];
        }
    }
    std::vector<std::pair<std::string, std::size_t>> kept;
    for (auto& [tok, n] : freq) {
        // Text spelling a reserved token stays <unk>.
        if (n >= static_cast<std::size_t>(min_freq) && !reserved_spelling(tok)) {
            kept.emplace_back(tok, n);
        }
    }
    std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    std::vector<std::string> tokens;
    tokens.reserve(kept.size());
    for (auto& [tok, n] : kept) {
        tokens.push_back(std::move(tok));
    }
    return Vocabulary(std::move(tokens));
}

std::vector<int> encode(std::string_view text, const Vocabulary& vocab) {
    std::vector<int> ids{token_id::kBos};
    for (const auto& t : split_tokens(text)) {
        ids.push_back(vocab.id(t));
    }
    ids.push_back(token_id::kEos);
    return ids;
}

std::string decode(std::span<const int> ids, const Vocabulary& vocab) {
    std::string out;
    for (int id : ids) {
        if (Vocabulary::is_reserved(id)) {
            continue;
        }
        if (!out.empty()) {
            out.push_back(' ');
        }
        out += vocab.token(id);
    }
    return out;
}

// ---------------------------------------------------------------------------

namespace {

void append_float(std::string& out, float v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    out.append(buf, res.ptr);
}

}  // namespace

std::vector<EmbeddingRecord> read_records(const std::filesystem::path& path, std::size_t clip_dim,
                                          bool require_report) {
    std::ifstream in(path);
    if (!in) {
        throw InvalidInputError("cannot open " + path.string());
    }
    std::vector<EmbeddingRecord> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError(line_no, std::string("malformed JSON: ") + e.what());
        }
        EmbeddingRecord r;
        try {
            if (!j.is_object()) {
                throw ParseError(line_no, "record is not a JSON object");
            }
            r.id = j.at("id").get<std::string>();
            r.view = View::parse(j.at("view").get<std::string>());
            const auto& emb = j.at("embedding");
            if (!emb.is_array()) {
                throw ParseError(line_no, "embedding is not an array");
            }
            r.embedding.reserve(emb.size());
            for (const auto& v : emb) {
                r.embedding.push_back(v.get<float>());
            }
            if (j.contains("report")) {
                r.report = preprocess_report(j.at("report").get<std::string>());
            } else if (require_report) {
                throw ParseError(line_no, "missing field 'report'");
            }
        } catch (const json::exception& e) {
            throw ParseError(line_no, e.what());
        } catch (const EmptyReportError& e) {
            throw ParseError(line_no, e.what());
        }
        if (r.embedding.size() != clip_dim) {
            throw DimensionError(path.string() + " line " + std::to_string(line_no) + ": dimension mismatch, embedding has " +
                                 std::to_string(r.embedding.size()) + " values, expected " +
                                 std::to_string(clip_dim));
        }
        records.push_back(std::move(r));
    }
    return records;
}

void write_records(std::span<const EmbeddingRecord> records, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw InvalidInputError("cannot write " + path.string());
    }
    std::string line;
    for (const auto& r : records) {
        line.clear();
        line += "{\"id\":" + json(r.id).dump();
        line += ",\"view\":" + json(r.view.str()).dump();
        line += ",\"embedding\":[";
        for (std::size_t i = 0; i < r.embedding.size(); ++i) {
            if (i) {
                line.push_back(',');
            }
            append_float(line, r.embedding[i]);
        }
        line += "],\"report\":" + json(r.report).dump() + "}\n";
        out << line;
    }
}

SplitSet load_dataset(const std::filesystem::path& dir, std::size_t clip_dim) {
    if (!std::filesystem::is_directory(dir)) {
        throw InvalidInputError("dataset directory " + dir.string() + " does not exist");
    }
    auto part = [&](const char* name) {
        const auto file = dir / name;
        if (!std::filesystem::exists(file)) {
            return std::vector<EmbeddingRecord>{};
        }
        return filter_views(read_records(file, clip_dim));
    };
    SplitSet split{part("train.jsonl"), part("val.jsonl"), part("test.jsonl")};
    split.check_disjoint();
    return split;
}

void save_dataset(const SplitSet& split, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_records(split.train, dir / "train.jsonl");
    write_records(split.val, dir / "val.jsonl");
    write_records(split.test, dir / "test.jsonl");
}

void save_vocab(const Vocabulary& vocab, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw InvalidInputError("cannot write " + path.string());
    }
    for (const auto& t : vocab.corpus_tokens()) {
        out << t << '\n';
    }
}

Vocabulary load_vocab(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw InvalidInputError("cannot open " + path.string());
    }
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) {
        tokens.push_back(line);
    }
    return Vocabulary(std::move(tokens));
}

}  // namespace pfx
