// Copyright 2026 The lenrep Authors
// SPDX-License-Identifier: Apache-2.0

#include "lenrep/probe.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "lenrep/error.hpp"
#include "support.hpp"

namespace lenrep {
namespace {

using testing::planted_dataset;

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::Internal;
}

ProbeConfig fast(ProbeConfig c) {
  c.max_epochs = 60;
  return c;
}

TEST(RSquared, HandExamples) {
  const std::vector<double> y{1, 2, 3};
  EXPECT_NEAR(r_squared(y, std::vector<double>{1, 2, 3}), 1.0, 1e-9);
  EXPECT_NEAR(r_squared(y, std::vector<double>{2, 2, 2}), 0.0, 1e-9);
  EXPECT_NEAR(r_squared(y, std::vector<double>{1, 2, 4}), 0.5, 1e-9);
  EXPECT_LT(r_squared(y, std::vector<double>{3, 2, 1}), 0.0);  // not floored
}

TEST(RSquared, Errors) {
  EXPECT_EQ(kind_of([] { r_squared(std::vector<double>{4, 4, 4}, std::vector<double>{1, 2, 3}); }),
            ErrorKind::Degenerate);
  EXPECT_EQ(kind_of([] { r_squared(std::vector<double>{1, 2}, std::vector<double>{1}); }),
            ErrorKind::Config);
  EXPECT_EQ(kind_of([] { r_squared(std::vector<double>{1}, std::vector<double>{1}); }),
            ErrorKind::Config);
}

TEST(RSquared, IdentityMeanAndAffineInvariance) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> y(20), yhat(20);
    for (auto& v : y) v = g(rng);
    for (std::size_t i = 0; i < y.size(); ++i) yhat[i] = y[i] + 0.5 * g(rng);
    EXPECT_NEAR(r_squared(y, y), 1.0, 1e-12);
    const double mean = std::accumulate(y.begin(), y.end(), 0.0) / 20.0;
    EXPECT_NEAR(r_squared(y, std::vector<double>(20, mean)), 0.0, 1e-12);
    const double a = 0.5 + std::abs(g(rng)) * 3, b = g(rng) * 10;
    std::vector<double> ya(y), yha(yhat);
    for (auto& v : ya) v = a * v + b;
    for (auto& v : yha) v = a * v + b;
    EXPECT_NEAR(r_squared(ya, yha), r_squared(y, yhat), 1e-9);
  }
}

TEST(TrainProbe, RecoversPlantedUnit) {
  const auto ds = planted_dataset(5000, 7, 0.1, 16);
  const auto slice = make_slice(ds, 1, TapPoint::AttnOut);
  const auto full = train_probe(slice, ProbeConfig::full_vector());
  EXPECT_GE(full.val_r2, 0.95);
  EXPECT_LE(full.val_r2, 1.0);
  EXPECT_GE(train_probe(slice, ProbeConfig::per_unit(), SingleUnit{7}).val_r2, 0.95);
  EXPECT_LE(train_probe(slice, ProbeConfig::per_unit(), SingleUnit{3}).val_r2, 0.1);
}

TEST(TrainProbe, DeterministicForFixedSeed) {
  const auto ds = planted_dataset(1500, 2, 0.5, 8);
  const auto slice = make_slice(ds, 1, TapPoint::AttnOut);
  const auto a = train_probe(slice, fast(ProbeConfig::full_vector()));
  const auto b = train_probe(slice, fast(ProbeConfig::full_vector()));
  EXPECT_EQ(a.val_r2, b.val_r2);
  EXPECT_EQ(a.probe.w1, b.probe.w1);
}

TEST(TrainProbe, PredictMatchesReportedR2) {
  const auto ds = planted_dataset(1500, 2, 0.5, 8);
  const auto slice = make_slice(ds, 1, TapPoint::AttnOut);
  const auto fit = train_probe(slice, fast(ProbeConfig::full_vector()));
  std::vector<double> y, yhat;
  for (std::size_t r : slice.val_rows) {
    y.push_back(slice.targets[r]);
    yhat.push_back(fit.probe.predict(slice.features.row(r)));
  }
  EXPECT_NEAR(r_squared(y, yhat), fit.val_r2, 1e-4);
}

TEST(TrainProbe, ErrorPaths) {
  auto ds = planted_dataset(300, 2, 0.5, 8);
  auto slice = make_slice(ds, 1, TapPoint::AttnOut);
  EXPECT_EQ(kind_of([&] { train_probe(slice, ProbeConfig{}, SingleUnit{8}); }), ErrorKind::Config);
  ProbeSlice constant = slice;
  std::fill(constant.targets.begin(), constant.targets.end(), 3.0);
  EXPECT_EQ(kind_of([&] { train_probe(constant, ProbeConfig{}); }), ErrorKind::Degenerate);
  ProbeConfig bad;
  bad.dropout = 1.0;
  EXPECT_EQ(kind_of([&] { train_probe(slice, bad); }), ErrorKind::Config);
}

TEST(LinearProbe, RealizableLinearTarget) {
  auto ds = planted_dataset(2000, -1, 0.0, 10);
  auto slice = make_slice(ds, 1, TapPoint::AttnOut);
  for (std::size_t r = 0; r < slice.targets.size(); ++r) {
    const auto row = slice.features.row(r);
    slice.targets[r] = 3.0 * row[0] - 2.0 * row[4] + 0.5 * row[9] + 1.0;
  }
  EXPECT_GE(fit_linear_probe(slice).val_r2, 0.999);
}

TEST(LinearProbe, PlantedAndNoiseAgreeWithMlp) {
  const auto planted = planted_dataset(4000, 7, 0.1, 16);
  const auto ps = make_slice(planted, 1, TapPoint::AttnOut);
  const double lin = fit_linear_probe(ps).val_r2;
  const double mlp = train_probe(ps, ProbeConfig::full_vector()).val_r2;
  EXPECT_NEAR(lin, mlp, 0.05);
  EXPECT_GE(mlp, lin - 0.10);

  const auto noise = planted_dataset(4000, -1, 0.0, 16);
  const auto ns = make_slice(noise, 1, TapPoint::AttnOut);
  EXPECT_LE(fit_linear_probe(ns).val_r2, 0.05);
  EXPECT_GE(train_probe(ns, fast(ProbeConfig::full_vector())).val_r2,
            fit_linear_probe(ns).val_r2 - 0.10);
}

// The planted cell copied to every (layer, tap) of a 3-layer grid.
ActivationDataset grid_dataset(std::size_t records) {
  auto base = planted_dataset(records, 1, 0.3, 6);
  ActivationDataset ds = base;
  ds.layers = {1, 2, 3};
  ds.taps.assign(kAllTaps.begin(), kAllTaps.end());
  ds.groups.assign(12, base.groups[0]);
  return ds;
}

TEST(ProbeGrid, CountsCellsAndRuns) {
  const auto ds = grid_dataset(800);
  const auto report = probe_grid(ds, {1, 2, 3}, {kAllTaps.begin(), kAllTaps.end()},
                                 fast(ProbeConfig::full_vector()), 5);
  ASSERT_EQ(report.cells.size(), 12U);
  std::size_t trainings = 0;
  for (const auto& c : report.cells) {
    EXPECT_TRUE(c.present);
    trainings += c.r2.size();
    EXPECT_LE(c.r2_mean, 1.0);
  }
  EXPECT_EQ(trainings, 60U);
  // Identical cells with identical seeds give identical results.
  for (const auto& c : report.cells) EXPECT_NEAR(c.r2_mean, report.cells[0].r2_mean, 0.02);
}

TEST(ProbeGrid, SingleRunHasZeroStderrAndThreadsDoNotMatter) {
  const auto ds = grid_dataset(600);
  const std::vector<TapPoint> taps{TapPoint::AttnOut, TapPoint::MlpOut};
  const auto one = probe_grid(ds, {1, 3}, taps, fast(ProbeConfig::full_vector()), 1);
  for (const auto& c : one.cells) EXPECT_EQ(c.r2_stderr, 0.0);
  const auto a = probe_grid(ds, {1, 3}, taps, fast(ProbeConfig::full_vector()), 2, 1);
  const auto b = probe_grid(ds, {1, 3}, taps, fast(ProbeConfig::full_vector()), 2, 3);
  for (std::size_t i = 0; i < a.cells.size(); ++i) EXPECT_EQ(a.cells[i].r2, b.cells[i].r2);
}

TEST(ProbeGrid, DegenerateAndMissingCellsAreAbsent) {
  auto ds = planted_dataset(300, 1, 0.3, 4);
  for (auto& k : ds.keys) k.timestep = 1;
  const auto report =
      probe_grid(ds, {1, 2}, {TapPoint::AttnOut}, fast(ProbeConfig::full_vector()), 2);
  ASSERT_EQ(report.cells.size(), 2U);
  EXPECT_FALSE(report.cells[0].present);
  EXPECT_FALSE(report.cells[0].reason.empty());
  EXPECT_FALSE(report.cells[1].present);
  EXPECT_EQ(report.cells[1].reason, "not collected");
}

TEST(PerUnit, ScoresEveryUnitAndFindsThePlantedOne) {
  const auto ds = planted_dataset(3000, 5, 0.1, 12);
  const auto scores = probe_per_unit(make_slice(ds, 1, TapPoint::AttnOut), ProbeConfig::per_unit());
  ASSERT_EQ(scores.r2.size(), 12U);
  EXPECT_EQ(std::max_element(scores.r2.begin(), scores.r2.end()) - scores.r2.begin(), 5);
  const auto noise = planted_dataset(3000, -1, 0.0, 12);
  const auto ns = probe_per_unit(make_slice(noise, 1, TapPoint::AttnOut), ProbeConfig::per_unit(), 2);
  EXPECT_LE(*std::max_element(ns.r2.begin(), ns.r2.end()), 0.1);
}

TEST(Ranking, SortsWithLowerIndexTieBreak) {
  const auto r = rank_units({{0.9, 0.1, 0.5}}, 2, 3);
  EXPECT_EQ(r.top_k(2), (std::vector<std::size_t>{0, 2}));
  EXPECT_EQ(r.smallest_k(2), (std::vector<std::size_t>{1, 2}));
  EXPECT_NEAR(r.avg_top_m(3), 0.5, 1e-12);
  EXPECT_EQ(rank_units({{0.5, 0.5}}, 1, 1).top_k(1), (std::vector<std::size_t>{0}));
  EXPECT_TRUE(r.top_k(0).empty());
  EXPECT_EQ(kind_of([&] { rank_units({{0.5, 0.5}}, 3, 1); }), ErrorKind::Config);
}

TEST(Ranking, PermutationAndMonotoneAverages) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> coarse(0, 5);
  for (int trial = 0; trial < 20; ++trial) {
    UnitScores s;
    for (int i = 0; i < 40; ++i) s.r2.push_back(coarse(rng) / 5.0);
    const auto r = rank_units(s, 10, 30);
    auto order = r.order();
    for (std::size_t i = 1; i < order.size(); ++i) {
      EXPECT_GE(s.r2[order[i - 1]], s.r2[order[i]]);
      if (s.r2[order[i - 1]] == s.r2[order[i]]) {
        EXPECT_LT(order[i - 1], order[i]);
      }
    }
    std::sort(order.begin(), order.end());
    for (std::size_t i = 0; i < order.size(); ++i) EXPECT_EQ(order[i], i);
    for (std::size_t m = 2; m <= 40; ++m) EXPECT_LE(r.avg_top_m(m), r.avg_top_m(m - 1) + 1e-12);
  }
}

TEST(ProbeFiles, RoundTrip) {
  testing::TempDir dir("probe");
  ProbeReport rep;
  rep.n_runs = 2;
  rep.cells.push_back({1, TapPoint::AttnOut, true, "", {0.5, 0.25}, 0.375, 0.125});
  rep.cells.push_back({2, TapPoint::MlpResidual, false, "targets are constant", {}, 0, 0});
  write_probe_report(rep, dir.path() / "g.json", dir.path() / "g.csv");
  const auto back = read_probe_report(dir.path() / "g.json");
  ASSERT_EQ(back.cells.size(), 2U);
  EXPECT_EQ(back.cells[0].r2, rep.cells[0].r2);
  EXPECT_EQ(back.cells[1].reason, rep.cells[1].reason);
  UnitScores us{{0.1, 1.0 / 3.0, -0.2}};
  write_unit_scores(us, dir.path() / "u.json", dir.path() / "u.csv");
  EXPECT_EQ(read_unit_scores(dir.path() / "u.json").r2, us.r2);
}

}  // namespace
}  // namespace lenrep
