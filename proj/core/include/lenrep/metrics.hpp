// Copyright 2026 The lenrep Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "lenrep/corpus.hpp"
#include "lenrep/decode.hpp"

namespace lenrep {

double compression_ratio(std::size_t summary_len, std::size_t source_len);
/// Generated CR minus gold CR; positive means longer than the gold summary.
double delta_cr(std::size_t gen_len, std::size_t gold_len, std::size_t source_len);

struct RougeScores {
  double precision = 0.0;
  double recall = 0.0;
  double f = 0.0;
};

std::size_t lcs_length(std::span<const TokenId> a, std::span<const TokenId> b);

/// LCS-based Rouge-L with a balanced F measure. Empty inputs score zero.
RougeScores rouge_l(std::span<const TokenId> candidate, std::span<const TokenId> reference);

/// Content, filler and number tokens only; EOS and other control tokens dropped.
TokenSequence strip_control(std::span<const TokenId> seq);

struct MeanStderr {
  double mean = 0.0;
  double stderr_ = 0.0;  // sample std / sqrt(n); 0 when n == 1
};
MeanStderr mean_stderr(std::span<const double> values);

/// Spearman rank correlation with average ranks for ties; 0 when either
/// series is constant.
double spearman(std::span<const double> x, std::span<const double> y);

struct EvalRow {
  std::size_t example_id = 0;
  double cr_gen = 0.0;
  double cr_gold = 0.0;
  double delta_cr = 0.0;
  RougeScores rouge;
  std::size_t gen_len = 0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  MeanStderr cr_gen, cr_gold, delta_cr, rouge_p, rouge_r, rouge_f, gen_len;
  std::string prompt_kind;
  std::string decode;
  std::string intervention;
};

struct EvalInput {
  std::size_t example_id = 0;
  TokenSequence generated;
  TokenSequence gold;
  TokenSequence source;
};

EvalReport evaluate_run(std::span<const EvalInput> inputs);
EvalReport evaluate_run(std::span<const GenerationOutput> outputs,
                        std::span<const TokenSequence> golds,
                        std::span<const TokenSequence> sources);

void write_eval_json(const EvalReport& report, const std::filesystem::path& path);
/// `example_id,cr_gen,cr_gold,delta_cr,rl_p,rl_r,rl_f`
void write_eval_csv(const EvalReport& report, const std::filesystem::path& path);

}  // namespace lenrep
