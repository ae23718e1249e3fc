// Copyright 2026 The lenrep Authors
// SPDX-License-Identifier: Apache-2.0

#include "lenrep/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "lenrep/error.hpp"

namespace lenrep {

void TrainConfig::validate() const {
  if (epochs < 1 || batch < 1) fail(ErrorKind::Config, "epochs and batch must be positive");
  if (!(lr > 0.0F)) fail(ErrorKind::Config, "learning rate must be positive");
  if (warmup_steps < 0 || clip_norm <= 0.0F || final_lr_fraction < 0.0F)
    fail(ErrorKind::Config, "invalid schedule settings");
}

TrainingSequence make_training_sequence(const CompressionExample& ex, PromptKind kind) {
  auto r = render_training_sequence(ex, kind);
  TrainingSequence s;
  s.targets.assign(r.tokens.begin() + 1, r.tokens.end());
  s.tokens = std::move(r.tokens);
  s.tokens.pop_back();  // the final EOS is only ever a target
  s.loss_begin = r.target_begin - 1;
  return s;
}

PromptKind training_kind(const TrainConfig& config, std::size_t index, int epoch) {
  if (config.phase == TrainPhase::FineTune) return config.finetune_kind;
  return kAllPromptKinds[(index + static_cast<std::size_t>(epoch)) % 3];
}

std::vector<TrainingSequence> training_sequences(const Corpus& corpus,
                                                 std::span<const std::size_t> indices,
                                                 const TrainConfig& config, int epoch) {
  std::vector<TrainingSequence> out;
  out.reserve(indices.size());
  for (auto i : indices)
    out.push_back(make_training_sequence(corpus.examples.at(i), training_kind(config, i, epoch)));
  return out;
}

std::size_t argmax(std::span<const float> values) noexcept {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

namespace {

struct CountedRows {
  std::vector<std::size_t> rows;  // packed row index
  TokenSequence labels;
};

CountedRows counted_rows(std::span<const TrainingSequence> batch, PackedBatch& packed) {
  CountedRows out;
  for (const auto& seq : batch) {
    const std::size_t base = packed.rows();
    packed.add(seq.tokens);
    for (std::size_t t = seq.loss_begin; t < seq.tokens.size(); ++t) {
      out.rows.push_back(base + t);
      out.labels.push_back(seq.targets[t]);
    }
  }
  return out;
}

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> rows) {
  Matrix out(rows.size(), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy(m.row(rows[i]).begin(), m.row(rows[i]).end(), out.row(i).begin());
  return out;
}

}  // namespace

LossAndGrad batch_loss(const Model& model, std::span<const TrainingSequence> batch,
                       std::span<float> grads) {
  PackedBatch packed;
  const auto counted = counted_rows(batch, packed);
  LossAndGrad result;
  result.counted = counted.rows.size();
  if (counted.rows.empty()) return result;

  ForwardCache fc;
  model.forward_train(packed, fc);
  const auto t = bind_tensors(model.config(), model.parameters());
  const Matrix selected = gather_rows(fc.n_final, counted.rows);
  Matrix logits;
  matmul(selected, t.lm_head, logits);

  const std::size_t vocab = logits.cols();
  const float inv_n = 1.0F / static_cast<float>(counted.rows.size());
  Matrix d_logits(logits.rows(), vocab);
  double total = 0.0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto row = logits.row(i);
    const float mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (float v : row) sum += std::exp(static_cast<double>(v - mx));
    const double lse = static_cast<double>(mx) + std::log(sum);
    const auto label = static_cast<std::size_t>(counted.labels[i]);
    total += lse - static_cast<double>(row[label]);
    for (std::size_t j = 0; j < vocab; ++j)
      d_logits(i, j) = static_cast<float>(std::exp(static_cast<double>(row[j]) - lse)) * inv_n;
    d_logits(i, label) -= inv_n;
  }
  result.loss = total / static_cast<double>(counted.rows.size());
  if (grads.empty()) return result;

  auto g = bind_tensors(model.config(), grads);
  matmul_tn_acc(selected, d_logits, g.lm_head);
  Matrix d_selected;
  matmul_nt(d_logits, t.lm_head, d_selected);
  Matrix d_final(fc.n_final.rows(), fc.n_final.cols());
  for (std::size_t i = 0; i < counted.rows.size(); ++i) {
    auto dst = d_final.row(counted.rows[i]);
    const auto src = d_selected.row(i);
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
  }
  model.backward(packed, fc, d_final, grads);
  return result;
}

TrainLog train(Model& model, const Corpus& corpus, const TrainConfig& config,
               const std::function<void(int, double)>& on_epoch) {
  config.validate();
  if (corpus.split.train.empty()) fail(ErrorKind::Data, "training split is empty");
  const std::size_t n_params = model.parameters().size();
  std::vector<float> grads(n_params), m(n_params, 0.0F), v(n_params, 0.0F);
  constexpr float kBeta1 = 0.9F, kBeta2 = 0.98F, kEps = 1e-8F;

  const std::size_t n = config.max_examples == 0
                            ? corpus.split.train.size()
                            : std::min(config.max_examples, corpus.split.train.size());
  const std::size_t batch = static_cast<std::size_t>(config.batch);
  const std::size_t steps_per_epoch = (n + batch - 1) / batch;
  const std::size_t total_steps = steps_per_epoch * static_cast<std::size_t>(config.epochs);

  std::mt19937_64 rng(config.seed);
  TrainLog log;
  std::size_t step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> order(corpus.split.train.begin(), corpus.split.train.end());
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(n);
    const auto seqs = training_sequences(corpus, order, config, epoch);

    double epoch_loss = 0.0;
    std::size_t epoch_count = 0;
    for (std::size_t b = 0; b < n; b += batch) {
      const std::span<const TrainingSequence> chunk(seqs.data() + b, std::min(batch, n - b));
      std::fill(grads.begin(), grads.end(), 0.0F);
      const auto lg = batch_loss(model, chunk, grads);
      epoch_loss += lg.loss * static_cast<double>(lg.counted);
      epoch_count += lg.counted;

      double norm2 = 0.0;
      for (float gv : grads) norm2 += static_cast<double>(gv) * gv;
      const double norm = std::sqrt(norm2);
      const float clip = norm > config.clip_norm ? static_cast<float>(config.clip_norm / norm) : 1.0F;

      ++step;
      float lr = config.lr;
      if (step <= static_cast<std::size_t>(config.warmup_steps)) {
        lr *= static_cast<float>(step) / static_cast<float>(config.warmup_steps);
      } else {
        const double span = std::max<double>(1.0, static_cast<double>(total_steps - config.warmup_steps));
        const double progress = static_cast<double>(step - config.warmup_steps) / span;
        const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(1.0, progress)));
        lr *= static_cast<float>(config.final_lr_fraction + (1.0 - config.final_lr_fraction) * cosine);
      }
      const float bc1 = 1.0F - std::pow(kBeta1, static_cast<float>(step));
      const float bc2 = 1.0F - std::pow(kBeta2, static_cast<float>(step));
      auto params = model.parameters();
      for (std::size_t i = 0; i < n_params; ++i) {
        const float gi = grads[i] * clip;
        m[i] = kBeta1 * m[i] + (1.0F - kBeta1) * gi;
        v[i] = kBeta2 * v[i] + (1.0F - kBeta2) * gi * gi;
        params[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + kEps);
      }
    }
    log.epoch_loss.push_back(epoch_count ? epoch_loss / static_cast<double>(epoch_count) : 0.0);
    if (on_epoch) on_epoch(epoch, log.epoch_loss.back());
  }
  log.steps = step;
  return log;
}

AccuracyReport evaluate_accuracy(const Model& model, const Corpus& corpus,
                                 std::span<const std::size_t> indices, PromptKind kind) {
  AccuracyReport report;
  std::size_t correct_tokens = 0;
  std::size_t correct_sequences = 0;
  constexpr std::size_t kChunk = 64;
  const auto t = bind_tensors(model.config(), model.parameters());
  for (std::size_t b = 0; b < indices.size(); b += kChunk) {
    std::vector<TrainingSequence> seqs;
    for (std::size_t i = b; i < std::min(indices.size(), b + kChunk); ++i)
      seqs.push_back(make_training_sequence(corpus.examples.at(indices[i]), kind));
    PackedBatch packed;
    for (const auto& s : seqs) packed.add(s.tokens);
    ForwardCache fc;
    model.forward_train(packed, fc);
    Matrix logits;
    matmul(fc.n_final, t.lm_head, logits);
    for (std::size_t s = 0; s < seqs.size(); ++s) {
      bool all = true;
      for (std::size_t p = seqs[s].loss_begin; p < seqs[s].tokens.size(); ++p) {
        const bool ok = static_cast<TokenId>(argmax(logits.row(packed.offsets[s] + p))) ==
                        seqs[s].targets[p];
        correct_tokens += ok;
        all = all && ok;
        ++report.tokens;
      }
      correct_sequences += all;
      ++report.sequences;
    }
  }
  if (report.tokens) report.token_accuracy = static_cast<double>(correct_tokens) / report.tokens;
  if (report.sequences)
    report.sequence_accuracy = static_cast<double>(correct_sequences) / report.sequences;
  return report;
}

}  // namespace lenrep
