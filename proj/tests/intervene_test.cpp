// Copyright 2026 The lenrep Authors
// SPDX-License-Identifier: Apache-2.0

#include "lenrep/intervene.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "lenrep/error.hpp"
#include "support.hpp"

namespace lenrep {
namespace {

using testing::tiny_model_config;

// Random weights large enough that outputs depend on the input.
Model noisy_model() {
  Model m(tiny_model_config(21));
  std::mt19937_64 rng(8);
  std::normal_distribution<float> g(0.0F, 0.3F);
  for (auto& p : m.parameters()) p += g(rng);
  return m;
}

std::vector<CompressionExample> examples(std::size_t n) {
  CorpusConfig c;
  c.n_examples = n;
  c.max_len = 16;
  c.seed = 4;
  return generate_corpus(c).examples;
}

DecodeConfig budget(int n, std::variant<Greedy, Beam, TopK> s = Greedy{}) {
  DecodeConfig d;
  d.strategy = s;
  d.max_new_tokens = n;
  return d;
}

InterventionSpec spec(std::vector<std::size_t> units, double scale,
                      PositionScope scope = PositionScope::AllGenerated) {
  InterventionSpec s;
  s.layer = 2;
  s.tap = TapPoint::AttnOut;
  s.units = std::move(units);
  s.scale = scale;
  s.scope = scope;
  return s;
}

TEST(Intervention, IdentityAtScaleOneAndEmptyUnits) {
  const Model model = noisy_model();
  for (const auto& strategy : {std::variant<Greedy, Beam, TopK>{Greedy{}},
                               std::variant<Greedy, Beam, TopK>{Beam{3}},
                               std::variant<Greedy, Beam, TopK>{TopK{5, 1.0F, 9}}}) {
    const auto d = budget(10, strategy);
    for (const auto& ex : examples(8)) {
      const auto prompt = render_prompt(ex, PromptKind::Priming);
      const auto base = generate(model, prompt, d).generated;
      EXPECT_EQ(generate_with_intervention(model, prompt, spec({0, 3, 7}, 1.0), d).generated, base);
      EXPECT_EQ(generate_with_intervention(model, prompt, spec({}, -10.0), d).generated, base);
    }
  }
}

TEST(Intervention, LargeScaleChangesSomeOutput) {
  const Model model = noisy_model();
  std::vector<std::size_t> all(32);
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  int changed = 0;
  for (const auto& ex : examples(8)) {
    const auto prompt = render_prompt(ex, PromptKind::Priming);
    changed += generate(model, prompt, budget(10)).generated !=
               generate_with_intervention(model, prompt, spec(all, -10.0), budget(10)).generated;
  }
  EXPECT_GT(changed, 0);
}

TEST(Intervention, OnlySelectedUnitsAtTheHookedTapChange) {
  const Model model = noisy_model();
  const CaptureRequest cap{{1, 2, 3}, {kAllTaps.begin(), kAllTaps.end()}};
  const std::vector<std::size_t> units{2, 5, 11};
  const auto prompt = render_prompt(examples(1)[0], PromptKind::Priming);
  const auto base = generate(model, prompt, budget(3), Hooks{&cap, nullptr});
  const auto hit = generate_with_intervention(
      model, prompt, spec(units, 5.0, PositionScope::FirstGeneratedOnly), budget(3), &cap);
  ASSERT_GE(hit.captures.size(), 2U);
  ASSERT_EQ(hit.generated[0], base.generated[0]);
  // Timestep 1 comes from the last prompt position, which is never scaled.
  EXPECT_EQ(hit.captures[0].values(), base.captures[0].values());

  // Timestep 2 is the first generated position.
  const Matrix& b = base.captures[1];
  const Matrix& h = hit.captures[1];
  auto is_selected = [&](std::size_t j) {
    return std::find(units.begin(), units.end(), j) != units.end();
  };
  for (std::size_t ti = 0; ti < 4; ++ti)
    for (std::size_t j = 0; j < 32; ++j) ASSERT_EQ(h(cap.slot(0, ti), j), b(cap.slot(0, ti), j));
  const std::size_t attn = cap.slot(1, 0), resid = cap.slot(1, 1);
  for (std::size_t j = 0; j < 32; ++j) {
    if (is_selected(j)) {
      EXPECT_NEAR(h(attn, j), 5.0F * b(attn, j), 1e-6 * (1 + std::abs(5.0F * b(attn, j))));
      EXPECT_NEAR(h(resid, j) - b(resid, j), h(attn, j) - b(attn, j), 1e-5);
    } else {
      EXPECT_EQ(h(attn, j), b(attn, j));
      EXPECT_EQ(h(resid, j), b(resid, j));
    }
  }
}

TEST(ScalingHook, NeverTouchesPromptRowsOrOtherSites) {
  const auto s = spec({0, 1}, 3.0);
  ScalingHook hook(s, 5);
  std::vector<float> row{1, 2, 3};
  for (std::size_t p = 0; p < 5; ++p) hook.on_tap({2, TapPoint::AttnOut, p}, row);
  hook.on_tap({1, TapPoint::AttnOut, 7}, row);
  hook.on_tap({2, TapPoint::MlpOut, 7}, row);
  EXPECT_EQ(row, (std::vector<float>{1, 2, 3}));
  EXPECT_EQ(hook.applications(), 0U);
  hook.on_tap({2, TapPoint::AttnOut, 5}, row);
  EXPECT_EQ(row, (std::vector<float>{3, 6, 3}));
  EXPECT_EQ(hook.applications(), 1U);
}

TEST(ScalingHook, ApplicationCountsFollowScope) {
  const Model model = noisy_model();
  const auto prompt = render_prompt(examples(1)[0], PromptKind::Length);
  for (auto scope : {PositionScope::AllGenerated, PositionScope::FirstGeneratedOnly}) {
    const auto s = spec({1}, 1.0, scope);
    ScalingHook hook(s, prompt.size());
    const auto out = generate(model, prompt, budget(6), Hooks{nullptr, &hook});
    ASSERT_GE(out.generated.size(), 2U);
    // The last generated token is never fed back.
    const std::size_t fed = out.generated.size() - 1;
    EXPECT_EQ(hook.applications(), scope == PositionScope::AllGenerated ? fed : 1U);
  }
}

TEST(InterventionSpec, RejectsInvalidSpecs) {
  const auto mc = tiny_model_config();
  auto expect_config = [&](InterventionSpec s) {
    try {
      s.validate(mc);
      ADD_FAILURE() << s.describe();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::Config);
    }
  };
  auto s = spec({1}, 2.0);
  s.tap = TapPoint::AttnResidual;
  expect_config(s);
  s.tap = TapPoint::MlpResidual;
  expect_config(s);
  expect_config([] { auto t = spec({1}, 2.0); t.layer = 0; return t; }());
  expect_config([] { auto t = spec({1}, 2.0); t.layer = 4; return t; }());
  expect_config(spec({32}, 2.0));
  expect_config(spec({1}, std::numeric_limits<double>::quiet_NaN()));
  EXPECT_NO_THROW(spec({31}, -10.0).validate(mc));
  auto mlp = spec({0}, 2.0);
  mlp.tap = TapPoint::MlpOut;
  EXPECT_NO_THROW(mlp.validate(mc));
}

TEST(InterventionSpec, ScopeRoundTrip) {
  for (auto s : {PositionScope::AllGenerated, PositionScope::FirstGeneratedOnly})
    EXPECT_EQ(parse_position_scope(to_string(s)), s);
  EXPECT_THROW(parse_position_scope("everywhere"), Error);
}

std::vector<Selection> tiny_selections() {
  UnitScores s;
  for (int i = 0; i < 32; ++i) s.r2.push_back(std::sin(i * 1.7));
  return selections_from(rank_units(s, 4, 8), {4});
}

TEST(Sweep, GridShapeAndBaseCell) {
  const Model model = noisy_model();
  const auto exs = examples(5);
  const auto sels = tiny_selections();
  ASSERT_EQ(sels.size(), 2U);
  EXPECT_EQ(sels[0].name, "top-4");
  EXPECT_EQ(sels[1].name, "smallest-4");
  const auto r = sweep_intervention(model, exs, PromptKind::Priming, spec({}, 1.0), {5, -2, 5},
                                    sels, budget(8));
  ASSERT_EQ(r.cells.size(), 6U);
  EXPECT_EQ(r.cells[0].scale, -2.0);
  EXPECT_EQ(r.cells[1].scale, 1.0);
  EXPECT_EQ(r.cells[2].scale, 5.0);
  EXPECT_EQ(r.cells[3].selection, "smallest-4");
  for (const auto& c : r.cells) ASSERT_EQ(c.outputs.size(), exs.size());
  for (const auto& name : {"top-4", "smallest-4"}) {
    const auto& base = r.cell(name, 1.0);
    for (std::size_t i = 0; i < exs.size(); ++i)
      EXPECT_EQ(base.outputs[i],
                generate(model, render_prompt(exs[i], PromptKind::Priming), budget(8)).generated);
  }
  EXPECT_THROW(r.cell("top-4", 3.0), Error);
}

TEST(Sweep, ThreadsDoNotChangeResultsAndFilesRoundTrip) {
  const Model model = noisy_model();
  const auto exs = examples(4);
  const auto sels = tiny_selections();
  const auto a = sweep_intervention(model, exs, PromptKind::Length, spec({}, 1.0), {-5, 2}, sels,
                                    budget(6), 1);
  const auto b = sweep_intervention(model, exs, PromptKind::Length, spec({}, 1.0), {-5, 2}, sels,
                                    budget(6), 3);
  ASSERT_EQ(a.cells.size(), b.cells.size());
  for (std::size_t i = 0; i < a.cells.size(); ++i) {
    EXPECT_EQ(a.cells[i].outputs, b.cells[i].outputs);
    EXPECT_EQ(a.cells[i].eval.delta_cr.mean, b.cells[i].eval.delta_cr.mean);
  }
  testing::TempDir dir("sweep");
  write_sweep(a, dir.path() / "s.json", dir.path() / "s.csv");
  const auto back = read_sweep(dir.path() / "s.json");
  EXPECT_EQ(back.example_ids, a.example_ids);
  EXPECT_EQ(back.decode, a.decode);
  ASSERT_EQ(back.cells.size(), a.cells.size());
  for (std::size_t i = 0; i < a.cells.size(); ++i) {
    EXPECT_EQ(back.cells[i].outputs, a.cells[i].outputs);
    EXPECT_EQ(back.cells[i].eval.rouge_f.mean, a.cells[i].eval.rouge_f.mean);
    EXPECT_EQ(back.cells[i].units, a.cells[i].units);
  }
  EXPECT_THROW(sweep_intervention(model, {}, PromptKind::Length, spec({}, 1.0), {2}, sels,
                                  budget(6)),
               Error);
}

}  // namespace
}  // namespace lenrep
