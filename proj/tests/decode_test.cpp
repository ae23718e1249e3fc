// Copyright 2026 The lenrep Authors
// SPDX-License-Identifier: Apache-2.0

#include "lenrep/decode.hpp"

#include <gtest/gtest.h>

#include "lenrep/error.hpp"
#include "lenrep/train.hpp"
#include "support.hpp"

namespace lenrep {
namespace {

std::vector<TokenSequence> prompts(std::size_t n) {
  const Corpus c = generate_corpus({n, 8, 32, 0.45, 6});
  std::vector<TokenSequence> out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(render_prompt(c.examples[i], kAllPromptKinds[i % 3]));
  return out;
}

TEST(DecodeConfig, DescribeParseRoundTrip) {
  for (const auto& text : {"greedy/64", "beam3/10", "topk10:t0.7:s5/32", "beam1/1"}) {
    const auto c = DecodeConfig::parse(text);
    EXPECT_EQ(c.describe(), text);
    EXPECT_EQ(DecodeConfig::parse(c.describe()), c);
  }
  EXPECT_THROW(DecodeConfig::parse("nucleus/9"), Error);
  EXPECT_THROW(DecodeConfig::parse("greedy/0"), Error);
  EXPECT_THROW(DecodeConfig::parse("beam0/5"), Error);
}

TEST(Generate, GreedyIsArgmaxOfFullForward) {
  const Model m(testing::tiny_model_config());
  const auto p = prompts(1)[0];
  const auto out = generate(m, p, {Greedy{}, 12});
  ASSERT_FALSE(out.generated.empty());
  TokenSequence seq = p;
  for (TokenId t : out.generated) {
    const auto f = m.forward(seq);
    EXPECT_EQ(static_cast<TokenId>(argmax(f.logits.row(seq.size() - 1))), t);
    seq.push_back(t);
  }
}

TEST(Generate, BeamOfOneEqualsGreedy) {
  const Model m(testing::tiny_model_config(5));
  for (const auto& p : prompts(20)) {
    const auto g = generate(m, p, {Greedy{}, 24});
    const auto b = generate(m, p, {Beam{1}, 24});
    EXPECT_EQ(g.generated, b.generated);
  }
}

TEST(Generate, TopKIsReproduciblePerSeed) {
  const Model m(testing::tiny_model_config());
  const auto p = prompts(1)[0];
  const DecodeConfig c{TopK{10, 1.0F, 42}, 30};
  EXPECT_EQ(generate(m, p, c).generated, generate(m, p, c).generated);
  const DecodeConfig other{TopK{10, 1.0F, 43}, 30};
  bool differs = false;
  for (const auto& q : prompts(5)) differs |= generate(m, q, c).generated != generate(m, q, other).generated;
  EXPECT_TRUE(differs);
}

TEST(Generate, TopKOneIsGreedy) {
  const Model m(testing::tiny_model_config());
  for (const auto& p : prompts(5))
    EXPECT_EQ(generate(m, p, {TopK{1, 1.0F, 3}, 16}).generated,
              generate(m, p, {Greedy{}, 16}).generated);
}

TEST(Generate, BudgetAndContextLimits) {
  const Model m(testing::tiny_model_config());
  const auto p = prompts(1)[0];
  EXPECT_LE(generate(m, p, {Greedy{}, 3}).generated.size(), 3U);
  TokenSequence long_prompt(95, Vocab::filler(1));
  EXPECT_LE(generate(m, long_prompt, {Greedy{}, 64}).generated.size(), 2U);
  TokenSequence too_long(97, Vocab::filler(1));
  EXPECT_THROW(generate(m, too_long, {Greedy{}, 4}), Error);
  EXPECT_THROW(generate(m, {}, {Greedy{}, 4}), Error);
}

TEST(Generate, BeamIsDeterministicAndBounded) {
  const Model m(testing::tiny_model_config(7));
  for (const auto& p : prompts(6)) {
    const auto x = generate(m, p, {Beam{3}, 10});
    EXPECT_EQ(x.generated, generate(m, p, {Beam{3}, 10}).generated);
    EXPECT_LE(x.generated.size(), 10U);
    for (std::size_t i = 0; i + 1 < x.generated.size(); ++i) EXPECT_NE(x.generated[i], Vocab::eos());
  }
}

}  // namespace
}  // namespace lenrep
