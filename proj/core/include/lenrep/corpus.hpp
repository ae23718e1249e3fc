// Copyright 2026 The lenrep Authors
// SPDX-License-Identifier: Apache-2.0

// Synthetic length-constrained compression task.
//
// A source sequence mixes "content" and "filler" tokens; its gold summary is
// the content tokens in order. Membership is decided by token-id class, so a
// small model can learn which tokens to keep. Prompts come in three families
// that carry progressively more explicit length information.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace lenrep {

using TokenId = std::int32_t;
using TokenSequence = std::vector<TokenId>;

enum class ControlToken : TokenId { Bos = 0, Eos, Pad, Src, Len, Keep, Del, Compress };

/// Fixed vocabulary: 8 control tokens, 64 content, 64 filler, and one atomic
/// token for each count 0..127.
class Vocab {
 public:
  static constexpr int kControlCount = 8;
  static constexpr int kContentCount = 64;
  static constexpr int kFillerCount = 64;
  static constexpr int kNumberCount = 128;
  static constexpr int kMaxNumber = kNumberCount - 1;

  static constexpr TokenId kContentBase = kControlCount;
  static constexpr TokenId kFillerBase = kContentBase + kContentCount;
  static constexpr TokenId kNumberBase = kFillerBase + kFillerCount;
  static constexpr int kSize = kNumberBase + kNumberCount;

  static constexpr int size() noexcept { return kSize; }

  static constexpr TokenId control(ControlToken t) noexcept { return static_cast<TokenId>(t); }
  static constexpr TokenId bos() noexcept { return control(ControlToken::Bos); }
  static constexpr TokenId eos() noexcept { return control(ControlToken::Eos); }

  static TokenId content(int index);
  static TokenId filler(int index);
  /// Token for the count n; throws Config error when n is outside 0..127.
  static TokenId number(int n);

  static constexpr bool is_control(TokenId t) noexcept { return t >= 0 && t < kContentBase; }
  static constexpr bool is_content(TokenId t) noexcept {
    return t >= kContentBase && t < kFillerBase;
  }
  static constexpr bool is_filler(TokenId t) noexcept { return t >= kFillerBase && t < kNumberBase; }
  static constexpr bool is_number(TokenId t) noexcept { return t >= kNumberBase && t < kSize; }
  static int number_value(TokenId t);

  /// One line per id range, e.g. "content=8:64" (first id, count).
  static std::string layout();
};

struct CompressionExample {
  std::uint32_t id = 0;
  TokenSequence source;
  TokenSequence gold;

  int src_len() const noexcept { return static_cast<int>(source.size()); }
  int keep_len() const noexcept { return static_cast<int>(gold.size()); }
  int del_len() const noexcept { return src_len() - keep_len(); }

  bool operator==(const CompressionExample&) const = default;
};

/// Content tokens of `source`, in order.
TokenSequence extract_gold(const TokenSequence& source);

enum class PromptKind { NoConstraint, Length, Priming };
inline constexpr PromptKind kAllPromptKinds[] = {PromptKind::NoConstraint, PromptKind::Length,
                                                 PromptKind::Priming};

std::string_view to_string(PromptKind kind);
PromptKind parse_prompt_kind(std::string_view text);

struct CorpusConfig {
  std::size_t n_examples = 40000;
  int min_len = 8;
  int max_len = 32;
  double content_prob = 0.45;
  std::uint64_t seed = 7;

  void validate() const;
  bool operator==(const CorpusConfig&) const = default;
};

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct CorpusSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
  std::uint64_t seed = 0;

  bool operator==(const CorpusSplit&) const = default;
};

struct Corpus {
  CorpusConfig config;
  std::vector<CompressionExample> examples;
  CorpusSplit split;

  bool operator==(const Corpus&) const = default;
};

Corpus generate_corpus(const CorpusConfig& config);

/// Seeded permutation followed by contiguous assignment to train/val/test.
Corpus split_corpus(Corpus corpus, const SplitRatios& ratios, std::uint64_t seed);

/// Mean of keep_len / src_len over all examples.
double mean_compression_ratio(const Corpus& corpus);

TokenSequence render_prompt(const CompressionExample& ex, PromptKind kind);

/// Prompt followed by the gold summary and EOS, with the index of the first
/// target token (the first token after COMPRESS).
struct RenderedSequence {
  TokenSequence tokens;
  std::size_t target_begin = 0;
};
RenderedSequence render_training_sequence(const CompressionExample& ex, PromptKind kind);

/// Writes `path` (one example per line: id, source ids, gold ids, tab separated)
/// and a sidecar `path.header` with vocab layout, config, seed and split.
void write_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus read_corpus(const std::filesystem::path& path);

}  // namespace lenrep
