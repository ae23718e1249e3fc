// Copyright 2026 The lenrep Authors
// SPDX-License-Identifier: Apache-2.0

#include "lenrep/metrics.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "lenrep/error.hpp"

namespace lenrep {
namespace {

const TokenId a = Vocab::content(0), b = Vocab::content(1), c = Vocab::content(2),
              d = Vocab::content(3);

TEST(CompressionRatio, HandExamples) {
  EXPECT_NEAR(compression_ratio(9, 22), 9.0 / 22.0, 1e-12);
  EXPECT_NEAR(compression_ratio(9, 22), 0.4091, 1e-4);
  EXPECT_EQ(compression_ratio(0, 22), 0.0);
  EXPECT_EQ(compression_ratio(22, 22), 1.0);
}

TEST(CompressionRatio, EmptySourceIsAnError) {
  EXPECT_THROW(compression_ratio(3, 0), Error);
  EXPECT_THROW(delta_cr(3, 2, 0), Error);
}

TEST(DeltaCr, HandExamples) {
  EXPECT_NEAR(delta_cr(6, 9, 22), -0.1364, 1e-4);
  EXPECT_EQ(delta_cr(9, 9, 22), 0.0);
  EXPECT_NEAR(delta_cr(19, 9, 22), 0.4545, 1e-4);
}

TEST(DeltaCr, AntisymmetricAndMonotone) {
  for (std::size_t g = 0; g <= 22; ++g)
    for (std::size_t h = 0; h <= 22; ++h) {
      EXPECT_NEAR(delta_cr(g, h, 22), -delta_cr(h, g, 22), 1e-15);
      if (g + 1 <= 22) {
        EXPECT_GT(delta_cr(g + 1, h, 22), delta_cr(g, h, 22));
      }
    }
}

TEST(RougeL, HandExample) {
  const TokenSequence cand{a, b, c, d}, ref{a, c};
  EXPECT_EQ(lcs_length(cand, ref), 2U);
  const auto r = rouge_l(cand, ref);
  EXPECT_NEAR(r.recall, 1.0, 1e-12);
  EXPECT_NEAR(r.precision, 0.5, 1e-12);
  EXPECT_NEAR(r.f, 0.6667, 1e-4);
}

TEST(RougeL, IdentityAndEmpty) {
  const TokenSequence s{a, b, a, c};
  EXPECT_EQ(rouge_l(s, s).f, 1.0);
  EXPECT_EQ(rouge_l({}, TokenSequence{a}).f, 0.0);
  EXPECT_EQ(rouge_l(TokenSequence{a}, {}).f, 0.0);
  EXPECT_EQ(rouge_l({}, {}).f, 0.0);
}

TEST(RougeL, RandomPropertiesHold) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> len(0, 12), tok(0, 4);
  for (int trial = 0; trial < 500; ++trial) {
    TokenSequence x(static_cast<std::size_t>(len(rng))), y(static_cast<std::size_t>(len(rng)));
    for (auto& t : x) t = Vocab::content(tok(rng));
    for (auto& t : y) t = Vocab::content(tok(rng));
    const auto xy = rouge_l(x, y), yx = rouge_l(y, x);
    EXPECT_GE(xy.f, 0.0);
    EXPECT_LE(xy.f, 1.0);
    EXPECT_NEAR(xy.f, yx.f, 1e-15);
    EXPECT_EQ(xy.f == 1.0, !x.empty() && x == y);
  }
}

// Exhaustive subsequence search as an independent LCS oracle.
std::size_t brute_lcs(const TokenSequence& x, const TokenSequence& y) {
  std::size_t best = 0;
  for (std::uint32_t mask = 0; mask < (1U << x.size()); ++mask) {
    TokenSequence sub;
    for (std::size_t i = 0; i < x.size(); ++i)
      if (mask >> i & 1U) sub.push_back(x[i]);
    std::size_t j = 0;
    for (std::size_t i = 0; i < y.size() && j < sub.size(); ++i)
      if (y[i] == sub[j]) ++j;
    if (j == sub.size()) best = std::max(best, sub.size());
  }
  return best;
}

TEST(RougeL, LcsMatchesBruteForce) {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> len(0, 9), tok(0, 3);
  for (int trial = 0; trial < 200; ++trial) {
    TokenSequence x(static_cast<std::size_t>(len(rng))), y(static_cast<std::size_t>(len(rng)));
    for (auto& t : x) t = tok(rng);
    for (auto& t : y) t = tok(rng);
    EXPECT_EQ(lcs_length(x, y), brute_lcs(x, y));
  }
}

TEST(StripControl, DropsControlTokens) {
  const TokenSequence s{Vocab::bos(), a, Vocab::filler(2), Vocab::number(4), Vocab::eos()};
  EXPECT_EQ(strip_control(s), (TokenSequence{a, Vocab::filler(2), Vocab::number(4)}));
}

TEST(MeanStderr, SingleSampleHasZeroStderr) {
  const std::vector<double> one{0.7};
  EXPECT_EQ(mean_stderr(one).mean, 0.7);
  EXPECT_EQ(mean_stderr(one).stderr_, 0.0);
  const std::vector<double> v{1, 2, 3, 4};
  EXPECT_NEAR(mean_stderr(v).mean, 2.5, 1e-15);
  EXPECT_NEAR(mean_stderr(v).stderr_, std::sqrt(5.0 / 3.0) / 2.0, 1e-12);
}

TEST(Spearman, KnownValues) {
  const std::vector<double> x{1, 2, 3, 4, 5};
  const std::vector<double> up{2, 4, 6, 8, 100}, down{5, 4, 3, 2, 1}, flat{3, 3, 3, 3, 3};
  EXPECT_NEAR(spearman(x, up), 1.0, 1e-12);
  EXPECT_NEAR(spearman(x, down), -1.0, 1e-12);
  EXPECT_EQ(spearman(x, flat), 0.0);
  // ranks with ties: {1, 2.5, 2.5, 4}
  const std::vector<double> p{1, 2, 3, 4}, q{1, 2, 2, 3};
  EXPECT_NEAR(spearman(p, q), 0.9486832980505138, 1e-12);
}

EvalInput input(std::size_t id, TokenSequence gen, TokenSequence gold, std::size_t src_len) {
  return {id, std::move(gen), std::move(gold), TokenSequence(src_len, Vocab::filler(0))};
}

TEST(EvaluateRun, PerfectSingleExample) {
  const std::vector<EvalInput> in{input(0, {a, b, Vocab::eos()}, {a, b}, 5)};
  const auto r = evaluate_run(in);
  ASSERT_EQ(r.rows.size(), 1U);
  EXPECT_EQ(r.rows[0].delta_cr, 0.0);
  EXPECT_EQ(r.rows[0].rouge.f, 1.0);
  EXPECT_EQ(r.rows[0].gen_len, 2U);  // EOS excluded
  EXPECT_EQ(r.delta_cr.stderr_, 0.0);
}

TEST(EvaluateRun, AggregatesMatchRowsAndArePermutationInvariant) {
  std::vector<EvalInput> in{input(0, {a, b, c}, {a}, 6), input(1, {a}, {a, c, d}, 9),
                            input(2, {}, {b}, 4), input(3, {d, c, b, a}, {a, b, c, d}, 8)};
  const auto r = evaluate_run(in);
  std::vector<double> dcr, rf;
  for (const auto& row : r.rows) {
    EXPECT_NEAR(row.delta_cr, row.cr_gen - row.cr_gold, 1e-15);
    dcr.push_back(row.delta_cr);
    rf.push_back(row.rouge.f);
  }
  EXPECT_NEAR(r.delta_cr.mean, mean_stderr(dcr).mean, 1e-15);
  EXPECT_NEAR(r.delta_cr.stderr_, mean_stderr(dcr).stderr_, 1e-15);
  EXPECT_NEAR(r.rouge_f.mean, mean_stderr(rf).mean, 1e-15);

  std::reverse(in.begin(), in.end());
  const auto r2 = evaluate_run(in);
  EXPECT_NEAR(r2.delta_cr.mean, r.delta_cr.mean, 1e-12);
  EXPECT_NEAR(r2.delta_cr.stderr_, r.delta_cr.stderr_, 1e-12);
  EXPECT_NEAR(r2.rouge_f.mean, r.rouge_f.mean, 1e-12);
}

TEST(EvaluateRun, MismatchedListsAreDataErrors) {
  const std::vector<GenerationOutput> outs(2);
  const std::vector<TokenSequence> golds(1), sources(2);
  try {
    evaluate_run(outs, golds, sources);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Data);
  }
}

}  // namespace
}  // namespace lenrep
