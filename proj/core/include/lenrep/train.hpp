// Copyright 2026 The lenrep Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "lenrep/corpus.hpp"
#include "lenrep/model.hpp"

namespace lenrep {

/// Pretrain mixes all three prompt families; FineTune uses one.
enum class TrainPhase { Pretrain, FineTune };

struct TrainConfig {
  int epochs = 2;
  int batch = 32;
  float lr = 2e-3F;
  int warmup_steps = 200;
  std::size_t max_examples = 0;  // per-epoch cap on the train split; 0 = all
  float final_lr_fraction = 0.1F;  // cosine decay floor
  float clip_norm = 1.0F;
  TrainPhase phase = TrainPhase::Pretrain;
  PromptKind finetune_kind = PromptKind::Priming;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Next-token labels for every position; loss counts only positions at or
/// after `loss_begin` (those predicting the summary and EOS).
struct TrainingSequence {
  TokenSequence tokens;
  TokenSequence targets;  // targets[t] is the label for position t
  std::size_t loss_begin = 0;
};

TrainingSequence make_training_sequence(const CompressionExample& ex, PromptKind kind);

/// Prompt family used for example `index` in `epoch`.
PromptKind training_kind(const TrainConfig& config, std::size_t index, int epoch);

/// Sequences one epoch would see, in order (before shuffling).
std::vector<TrainingSequence> training_sequences(const Corpus& corpus,
                                                 std::span<const std::size_t> indices,
                                                 const TrainConfig& config, int epoch);

struct LossAndGrad {
  double loss = 0.0;       // mean cross-entropy over counted positions
  std::size_t counted = 0;
};

/// Mean masked cross-entropy over a batch; accumulates its gradient into
/// `grads` when non-empty.
LossAndGrad batch_loss(const Model& model, std::span<const TrainingSequence> batch,
                       std::span<float> grads);

struct TrainLog {
  std::vector<double> epoch_loss;  // mean training loss per epoch
  std::size_t steps = 0;
};

/// Adam with warmup, cosine decay and global-norm clipping. Deterministic
/// given config.seed. `on_epoch` receives the epoch index and its mean loss.
TrainLog train(Model& model, const Corpus& corpus, const TrainConfig& config,
               const std::function<void(int, double)>& on_epoch = {});

struct AccuracyReport {
  double token_accuracy = 0.0;     // teacher-forced argmax over summary + EOS
  double sequence_accuracy = 0.0;  // every target token correct
  std::size_t tokens = 0;
  std::size_t sequences = 0;
};

AccuracyReport evaluate_accuracy(const Model& model, const Corpus& corpus,
                                 std::span<const std::size_t> indices, PromptKind kind);

/// Index of the largest value, lowest index on ties.
std::size_t argmax(std::span<const float> values) noexcept;

}  // namespace lenrep
