// Copyright 2026 The lenrep Authors
// SPDX-License-Identifier: Apache-2.0
// Experiment stages writing into one run directory:
//
//   gen-corpus -> train -> finetune -> collect -> probe
//                                   \-> rank -> sweep
//                                   \-> evaluate
//   report reads whatever exists.
//
// Each stage writes `<stage>/manifest.json` with its config, seed and the
// SHA-256 of every input and output file.
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "lenrep/corpus.hpp"
#include "lenrep/decode.hpp"
#include "lenrep/error.hpp"
#include "lenrep/intervene.hpp"
#include "lenrep/kv_config.hpp"
#include "lenrep/probe.hpp"
#include "lenrep/train.hpp"

namespace lenrep {

inline constexpr const char* kToolVersion = "0.1.0";

/// Shorter, gentler schedule on the fine-tuning prompt family.
TrainConfig default_finetune();

struct ExperimentConfig {
  std::uint64_t master_seed = 2026;
  CorpusConfig corpus;
  SplitRatios split;
  ModelConfig model;
  TrainConfig pretrain;
  TrainConfig finetune = default_finetune();  // epochs = 0 skips fine-tuning

  PromptKind collect_kind = PromptKind::Priming;
  std::size_t collect_prompts = 1000;
  std::vector<int> layers;  // empty = every layer
  std::vector<TapPoint> taps{kAllTaps.begin(), kAllTaps.end()};
  DecodeConfig collect_decode;

  ProbeConfig probe_full = ProbeConfig::full_vector();
  ProbeConfig probe_unit = ProbeConfig::per_unit();
  int probe_runs = 5;

  int rank_layer = 2;
  TapPoint rank_tap = TapPoint::AttnOut;
  std::size_t top_m = 30;

  std::vector<double> scales = kDefaultScales;
  std::vector<std::size_t> k_list = {10};
  PositionScope scope = PositionScope::AllGenerated;
  PromptKind sweep_kind = PromptKind::Priming;
  std::size_t sweep_prompts = 100;
  std::vector<DecodeConfig> sweep_decodes = {DecodeConfig{}};

  std::vector<PromptKind> eval_kinds{std::begin(kAllPromptKinds), std::end(kAllPromptKinds)};
  std::size_t eval_prompts = 200;
  DecodeConfig eval_decode;

  unsigned threads = 1;
  std::filesystem::path out_dir = "run";

  /// Reads every known key; unknown keys are a Config error.
  static ExperimentConfig from_kv(const KvConfig& kv);
  /// Canonical key = value text; from_kv(parse(to_text())) round-trips.
  std::string to_text() const;
  /// Recomputes all stage seeds from master_seed.
  void derive_seeds();
  std::vector<int> probe_layers() const;
  bool has_finetune() const noexcept { return finetune.epochs > 0; }
  void validate() const;
};

struct RunOptions {
  bool override_provenance = false;
  std::ostream* log = nullptr;
};

/// Every stage name accepted by run_stage, in pipeline order.
const std::vector<std::string>& stage_names();

/// Runs one stage (or "run" for all of them, or "report"). Throws Error.
void run_stage(const std::string& stage, const ExperimentConfig& config,
               const RunOptions& options = {});

/// Process exit code for an error: 1 usage/config, 2 data or provenance,
/// 3 internal.
int exit_code(const Error& error) noexcept;

/// Path of the checkpoint stem the analysis stages use.
std::filesystem::path active_checkpoint(const ExperimentConfig& config);

// Stage output locations relative to the run directory.
namespace paths {
inline const std::filesystem::path kCorpus = "corpus/corpus.tsv";
inline const std::filesystem::path kPretrain = "model/pretrain";
inline const std::filesystem::path kFinetune = "model/finetune";
inline const std::filesystem::path kDataset = "collect/dataset.bin";
inline const std::filesystem::path kGridJson = "probe/grid.json";
inline const std::filesystem::path kGridCsv = "probe/grid.csv";
inline const std::filesystem::path kUnitsJson = "rank/units.json";
inline const std::filesystem::path kUnitsCsv = "rank/units.csv";
inline const std::filesystem::path kRanking = "rank/ranking.json";
inline const std::filesystem::path kAccuracy = "evaluate/accuracy.json";
/// File stem for a sweep under one decode config, e.g. "sweep/greedy-64".
std::filesystem::path sweep_stem(const DecodeConfig& decode);
}  // namespace paths

}  // namespace lenrep
