// Copyright 2026 The lenrep Authors
// SPDX-License-Identifier: Apache-2.0
// Regression probes predicting the generation step from tap activations:
//
//   y = w2 . ReLU(W1 x~ + b1) + b2,   x~ = (x - mean) / std  (train statistics)
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "lenrep/capture.hpp"

namespace lenrep {

/// 1 - SS_res / SS_tot over the given pairs. Throws Degenerate when the
/// targets are (numerically) constant and Config when sizes differ or n < 2.
double r_squared(std::span<const double> y, std::span<const double> yhat);

struct ProbeConfig {
  int hidden_width = 100;
  double dropout = 0.1;
  double lr = 1e-3;
  int max_epochs = 1000;
  int batch = 32;
  int patience = 10;
  std::uint64_t seed = 0;

  void validate() const;
  /// Batch 32, patience 10.
  static ProbeConfig full_vector();
  /// Batch 64, patience 5.
  static ProbeConfig per_unit();
};

struct AllFeatures {};
struct SingleUnit {
  std::size_t index = 0;
};
using FeatureSelector = std::variant<AllFeatures, SingleUnit>;

struct Probe {
  std::size_t input_dim = 0;
  std::size_t hidden = 0;
  std::vector<float> w1;  // hidden x input_dim, row-major
  std::vector<float> b1;
  std::vector<float> w2;
  float b2 = 0.0F;
  std::vector<double> feature_mean, feature_std;
  // The network regresses the standardized target.
  double target_mean = 0.0, target_std = 1.0;

  double predict(std::span<const float> x) const;
};

/// Records of one (layer, tap) cell plus their split.
struct ProbeSlice {
  ConstMatrixRef features;
  std::vector<double> targets;
  std::vector<std::size_t> train_rows, val_rows;
};

ProbeSlice make_slice(const ActivationDataset& dataset, int layer, TapPoint tap);

struct ProbeFit {
  Probe probe;
  double val_r2 = 0.0;
  int epochs = 0;  // epochs run before early stopping
};

ProbeFit train_probe(const ProbeSlice& slice, const ProbeConfig& config,
                     const FeatureSelector& selector = AllFeatures{});

struct ProbeCell {
  int layer = 1;
  TapPoint tap = TapPoint::AttnOut;
  bool present = true;
  std::string reason;  // why the cell is absent
  std::vector<double> r2;
  double r2_mean = 0.0;
  double r2_stderr = 0.0;
};

struct ProbeReport {
  int n_runs = 0;
  std::vector<ProbeCell> cells;  // layer-major, in request order

  const ProbeCell& cell(int layer, TapPoint tap) const;
};

/// n_runs probes per cell with seeds config.seed + 0 .. n_runs - 1. The result
/// does not depend on `threads`.
ProbeReport probe_grid(const ActivationDataset& dataset, const std::vector<int>& layers,
                       const std::vector<TapPoint>& taps, const ProbeConfig& config,
                       int n_runs = 5, unsigned threads = 1);

struct UnitScores {
  std::vector<double> r2;  // per unit, unclipped
};

UnitScores probe_per_unit(const ProbeSlice& slice, const ProbeConfig& config,
                          unsigned threads = 1);

class UnitRanking {
 public:
  explicit UnitRanking(std::vector<double> scores);

  /// Unit indices by descending score, ties to the lower index.
  const std::vector<std::size_t>& order() const noexcept { return order_; }
  const std::vector<double>& scores() const noexcept { return scores_; }
  std::vector<std::size_t> top_k(std::size_t k) const;
  /// Lowest scores first, ties to the lower index.
  std::vector<std::size_t> smallest_k(std::size_t k) const;
  double avg_top_m(std::size_t m) const;

 private:
  std::vector<double> scores_;
  std::vector<std::size_t> order_;
};

/// Throws Config when k or m exceeds the number of units.
UnitRanking rank_units(const UnitScores& scores, std::size_t k, std::size_t m);

struct LinearFit {
  std::vector<double> weights;  // on standardized features
  double intercept = 0.0;
  double val_r2 = 0.0;
};

/// Ridge (1e-6) least squares on standardized features.
LinearFit fit_linear_probe(const ProbeSlice& slice);

void write_probe_report(const ProbeReport& report, const std::filesystem::path& json_path,
                        const std::filesystem::path& csv_path);
ProbeReport read_probe_report(const std::filesystem::path& json_path);
void write_unit_scores(const UnitScores& scores, const std::filesystem::path& json_path,
                       const std::filesystem::path& csv_path);
UnitScores read_unit_scores(const std::filesystem::path& json_path);

}  // namespace lenrep
