// SPDX-License-Identifier: Apache-2.0
//
// Report-generation training. PrefixTuning freezes every "lm." tensor so
// only the mapping network learns; FineTuning trains both.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prefixbridge/corpus.hpp"
#include "prefixbridge/lm.hpp"
#include "prefixbridge/mapper.hpp"

namespace pfx {

enum class TrainMode { PrefixTuning, FineTuning };

std::string to_string(TrainMode mode);
/// Accepts "prefix"/"prefix_tuning" and "finetune"/"fine_tuning".
TrainMode parse_train_mode(std::string_view text);

struct TrainConfig {
    TrainMode mode = TrainMode::PrefixTuning;
    std::size_t epochs = 30;
    std::size_t batch_size = 16;
    AdamHyper adam;
    std::uint64_t seed = 0;
    bool shuffle = true;

    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

/// Frozen name prefixes for a training mode.
std::vector<std::string> freeze_mask(TrainMode mode);

/// Everything needed to run or resume a model: configs, vocabulary and the
/// parameter tensors. An LM-only checkpoint has no mapper config.
struct Checkpoint {
    LMConfig lm;
    std::optional<MapperConfig> mapper;
    std::optional<TrainConfig> train;
    Vocabulary vocab;
    ParameterStore<float> params;
};

/// Number of parameters updated under `mode`.
std::size_t trainable_param_count(const Checkpoint& model, TrainMode mode);

struct TrainingExample {
    std::string id;
    std::span<const float> embedding;
    std::vector<int> tokens;
};

/// Encodes every record's report. Throws LengthError naming the record when
/// prefix_length + tokens exceeds max_seq.
std::vector<TrainingExample> prepare_examples(std::span<const EmbeddingRecord> records, const Vocabulary& vocab,
                                              const LMConfig& lm, const MapperConfig& mapper);

/// Loss of one example: prefix = map_embedding(e); logits over [prefix; tokens];
/// prefix rows masked out. `logits_out` receives the logits node.
template <class T>
Var example_loss(Graph<T>& g, const LMConfig& lm, const MapperConfig& mapper, const TrainingExample& example,
                 Var* logits_out = nullptr);

/// Mean of example_loss over the batch.
template <class T>
Var batch_loss(Graph<T>& g, const LMConfig& lm, const MapperConfig& mapper, std::span<const TrainingExample> batch);

/// Batch loss value without building a backward tape.
double loss_step(Checkpoint& model, std::span<const EmbeddingRecord> batch);

struct EpochMetrics {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    std::optional<double> val_loss;
};

struct TrainResult {
    Checkpoint model;
    std::vector<EpochMetrics> log;
};

/// Seeded per-epoch shuffle, Adam under freeze_mask(config.mode), last
/// partial batch kept. Mapper tensors missing from `start` are initialized
/// from the config seed.
TrainResult train(const SplitSet& splits, Checkpoint start, const TrainConfig& config);

/// Rows "epoch,train_loss,val_loss"; an absent val loss is left empty.
std::string metrics_csv(std::span<const EpochMetrics> log);

}  // namespace pfx
