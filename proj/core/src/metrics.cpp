// Copyright 2026 The lenrep Authors
// SPDX-License-Identifier: Apache-2.0

#include "lenrep/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "lenrep/error.hpp"
#include "lenrep/io.hpp"

namespace lenrep {

double compression_ratio(std::size_t summary_len, std::size_t source_len) {
  if (source_len == 0) fail(ErrorKind::Config, "compression ratio needs a non-empty source");
  return static_cast<double>(summary_len) / static_cast<double>(source_len);
}

double delta_cr(std::size_t gen_len, std::size_t gold_len, std::size_t source_len) {
  return compression_ratio(gen_len, source_len) - compression_ratio(gold_len, source_len);
}

std::size_t lcs_length(std::span<const TokenId> a, std::span<const TokenId> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

RougeScores rouge_l(std::span<const TokenId> candidate, std::span<const TokenId> reference) {
  if (candidate.empty() || reference.empty()) return {};
  const auto lcs = static_cast<double>(lcs_length(candidate, reference));
  RougeScores s;
  s.precision = lcs / static_cast<double>(candidate.size());
  s.recall = lcs / static_cast<double>(reference.size());
  if (s.precision + s.recall > 0.0) s.f = 2.0 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

TokenSequence strip_control(std::span<const TokenId> seq) {
  TokenSequence out;
  for (auto t : seq)
    if (!Vocab::is_control(t)) out.push_back(t);
  return out;
}

MeanStderr mean_stderr(std::span<const double> values) {
  MeanStderr r;
  if (values.empty()) return r;
  const double n = static_cast<double>(values.size());
  r.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - r.mean) * (v - r.mean);
    r.stderr_ = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  }
  return r;
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) fail(ErrorKind::Data, "spearman: length mismatch");
  if (x.size() < 2) return 0.0;
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

EvalReport evaluate_run(std::span<const EvalInput> inputs) {
  EvalReport report;
  std::vector<double> cr_gen, cr_gold, dcr, rp, rr, rf, len;
  for (const auto& in : inputs) {
    const auto gen = strip_control(in.generated);
    const auto gold = strip_control(in.gold);
    const auto src = strip_control(in.source);
    EvalRow row;
    row.example_id = in.example_id;
    row.gen_len = gen.size();
    row.cr_gen = compression_ratio(gen.size(), src.size());
    row.cr_gold = compression_ratio(gold.size(), src.size());
    row.delta_cr = row.cr_gen - row.cr_gold;
    row.rouge = rouge_l(gen, gold);
    cr_gen.push_back(row.cr_gen);
    cr_gold.push_back(row.cr_gold);
    dcr.push_back(row.delta_cr);
    rp.push_back(row.rouge.precision);
    rr.push_back(row.rouge.recall);
    rf.push_back(row.rouge.f);
    len.push_back(static_cast<double>(row.gen_len));
    report.rows.push_back(row);
  }
  report.cr_gen = mean_stderr(cr_gen);
  report.cr_gold = mean_stderr(cr_gold);
  report.delta_cr = mean_stderr(dcr);
  report.rouge_p = mean_stderr(rp);
  report.rouge_r = mean_stderr(rr);
  report.rouge_f = mean_stderr(rf);
  report.gen_len = mean_stderr(len);
  return report;
}

EvalReport evaluate_run(std::span<const GenerationOutput> outputs,
                        std::span<const TokenSequence> golds,
                        std::span<const TokenSequence> sources) {
  if (outputs.size() != golds.size() || outputs.size() != sources.size())
    fail(ErrorKind::Data, "evaluate_run: outputs, golds and sources differ in length");
  std::vector<EvalInput> inputs;
  for (std::size_t i = 0; i < outputs.size(); ++i)
    inputs.push_back({i, outputs[i].generated, golds[i], sources[i]});
  return evaluate_run(inputs);
}

namespace {

nlohmann::json to_json(const MeanStderr& m) { return {{"mean", m.mean}, {"stderr", m.stderr_}}; }

}  // namespace

void write_eval_json(const EvalReport& report, const std::filesystem::path& path) {
  nlohmann::json j;
  j["metadata"] = {{"prompt_kind", report.prompt_kind},
                   {"decode", report.decode},
                   {"intervention", report.intervention}};
  j["aggregates"] = {{"cr_gen", to_json(report.cr_gen)},     {"cr_gold", to_json(report.cr_gold)},
                     {"delta_cr", to_json(report.delta_cr)}, {"rl_p", to_json(report.rouge_p)},
                     {"rl_r", to_json(report.rouge_r)},      {"rl_f", to_json(report.rouge_f)},
                     {"gen_len", to_json(report.gen_len)}};
  auto& rows = j["examples"] = nlohmann::json::array();
  for (const auto& r : report.rows)
    rows.push_back({{"example_id", r.example_id},
                    {"cr_gen", r.cr_gen},
                    {"cr_gold", r.cr_gold},
                    {"delta_cr", r.delta_cr},
                    {"rl_p", r.rouge.precision},
                    {"rl_r", r.rouge.recall},
                    {"rl_f", r.rouge.f}});
  write_text_file(path, j.dump(2) + "\n");
}

void write_eval_csv(const EvalReport& report, const std::filesystem::path& path) {
  std::string out = "example_id,cr_gen,cr_gold,delta_cr,rl_p,rl_r,rl_f\n";
  for (const auto& r : report.rows)
    out += std::to_string(r.example_id) + "," + format_real(r.cr_gen) + "," +
           format_real(r.cr_gold) + "," + format_real(r.delta_cr) + "," +
           format_real(r.rouge.precision) + "," + format_real(r.rouge.recall) + "," +
           format_real(r.rouge.f) + "\n";
  write_text_file(path, out);
}

}  // namespace lenrep
