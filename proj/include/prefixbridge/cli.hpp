// SPDX-License-Identifier: Apache-2.0
//
// Command-line driver. One JSON config with sections lm, pretrain, mapper,
// train, synth, decode and paths; command-line values of the form
// `--section.key=value` override file values, and the per-subcommand
// shorthands such as --mode override both.
//
// Every --out names a directory:
//   synth        train.jsonl val.jsonl test.jsonl
//   pretrain-lm  lm.ckpt pretrain.csv
//   train        model.ckpt metrics.csv
//   generate     reports.jsonl
//   evaluate     bleu.csv hypotheses.jsonl
// plus run.json in each.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "prefixbridge/config_json.hpp"
#include "prefixbridge/generate.hpp"
#include "prefixbridge/lm.hpp"
#include "prefixbridge/mapper.hpp"
#include "prefixbridge/trainer.hpp"

namespace pfx {

inline constexpr const char* kVersion = "0.1.0";

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitUsage = 2;

struct SynthSettings {
    std::uint64_t seed = 0;
    std::size_t k = 8;
    double noise_sigma = 0.05;
    std::size_t max_findings = 3;
    std::size_t n_train = 500;
    std::size_t n_val = 100;
    std::size_t n_test = 100;

    bool operator==(const SynthSettings&) const = default;
};

struct RunPaths {
    std::string data;
    std::string lm;
    std::string ckpt;
    std::string input;
    std::string out;

    bool operator==(const RunPaths&) const = default;
};

struct RunConfig {
    LMConfig lm;
    PretrainConfig pretrain;
    MapperConfig mapper;
    TrainConfig train;
    SynthSettings synth;
    DecodeConfig decode;
    RunPaths paths;

    bool operator==(const RunConfig&) const = default;
};

Json to_json(const RunConfig& config);
/// Strict: unknown sections or keys raise ConfigError naming them.
RunConfig run_config_from_json(const Json& j);

/// `overrides` are "section.key=value" strings applied in order. Values are
/// read as JSON literals when they parse as such and as strings otherwise;
/// every paths.* value is a string.
RunConfig parse_config(const std::optional<std::filesystem::path>& file, std::span<const std::string> overrides);

std::uint64_t fnv1a64(std::string_view bytes);

/// Runs one subcommand. `args` excludes the program name. Returns 0 on
/// success, 1 on an operational error and 2 on a usage error, printing a
/// one-line diagnostic to `err` on failure.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pfx
