// SPDX-License-Identifier: Apache-2.0

#include "prefixbridge/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "json.hpp"

namespace pfx {

NGramCounts ngram_counts(std::span<const std::string> tokens, std::size_t n) {
    NGramCounts counts;
    if (n == 0 || tokens.size() < n) {
        return counts;
    }
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
        ++counts[NGram(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                       tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
    }
    return counts;
}

BleuReport corpus_bleu(std::span<const std::pair<std::string, std::string>> pairs, std::size_t max_n) {
    if (pairs.empty()) {
        throw InvalidInputError("corpus_bleu: empty corpus");
    }
    if (max_n < 1 || max_n > kBleuMaxOrder) {
        throw InvalidInputError("corpus_bleu: max_n must lie in [1, 4]");
    }
    BleuReport report;
    for (const auto& [hyp_text, ref_text] : pairs) {
        const auto hyp = split_tokens(hyp_text);
        const auto ref = split_tokens(ref_text);
        report.hyp_len += hyp.size();
        report.ref_len += ref.size();
        for (std::size_t n = 1; n <= max_n; ++n) {
            const auto hyp_counts = ngram_counts(hyp, n);
            const auto ref_counts = ngram_counts(ref, n);
            for (const auto& [gram, count] : hyp_counts) {
                report.totals[n - 1] += count;
                if (auto it = ref_counts.find(gram); it != ref_counts.end()) {
                    report.matches[n - 1] += std::min(count, it->second);
                }
            }
        }
    }
    if (report.hyp_len == 0) {
        return report;
    }
    report.brevity_penalty =
        report.hyp_len > report.ref_len
            ? 1.0
            : std::exp(1.0 - static_cast<double>(report.ref_len) / static_cast<double>(report.hyp_len));
    double log_sum = 0.0;
    bool zero = false;
    for (std::size_t n = 1; n <= max_n; ++n) {
        const auto k = n - 1;
        report.precisions[k] =
            report.totals[k] == 0 ? 0.0 : static_cast<double>(report.matches[k]) / static_cast<double>(report.totals[k]);
        zero = zero || report.precisions[k] == 0.0;
        if (zero) {
            report.bleu[k] = 0.0;
            continue;
        }
        log_sum += std::log(report.precisions[k]);
        report.bleu[k] = report.brevity_penalty * std::exp(log_sum / static_cast<double>(n));
    }
    return report;
}

std::string format_score(double value) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", value * 100.0);
    return buf;
}

Evaluation evaluate_split(Checkpoint& model, std::span<const EmbeddingRecord> records, const DecodeConfig& decode) {
    Evaluation eval;
    std::vector<std::pair<std::string, std::string>> pairs;
    for (const auto& r : records) {
        const auto result = generate_report(model, r.embedding, decode);
        RecordOutput out{r.id, clean_text(result.text), clean_text(r.report)};
        pairs.emplace_back(out.hypothesis, out.reference);
        eval.outputs.push_back(std::move(out));
    }
    eval.bleu = corpus_bleu(pairs);
    return eval;
}

std::string bleu_csv(const BleuReport& report) {
    std::string out = "metric,value\n";
    for (std::size_t n = 0; n < kBleuMaxOrder; ++n) {
        out += "bleu" + std::to_string(n + 1) + "," + format_score(report.bleu[n]) + "\n";
    }
    char buf[64];
    std::snprintf(buf, sizeof(buf), "bp,%.6f\n", report.brevity_penalty);
    out += buf;
    out += "hyp_len," + std::to_string(report.hyp_len) + "\n";
    out += "ref_len," + std::to_string(report.ref_len) + "\n";
    return out;
}

void write_hypotheses_jsonl(std::span<const RecordOutput> outputs, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw InvalidInputError("cannot write " + path.string());
    }
    for (const auto& o : outputs) {
        nlohmann::ordered_json j;
        j["id"] = o.id;
        j["hypothesis"] = o.hypothesis;
        j["reference"] = o.reference;
        out << j.dump() << '\n';
    }
}

}  // namespace pfx
