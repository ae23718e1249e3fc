// Copyright 2026 The lenrep Authors
// SPDX-License-Identifier: Apache-2.0

#include "lenrep/report.hpp"

#include <algorithm>
#include <cstdio>
#include <map>

#include <nlohmann/json.hpp>

#include "lenrep/io.hpp"
#include "lenrep/pipeline.hpp"

namespace lenrep {

namespace fs = std::filesystem;

namespace {

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

}  // namespace

std::string format_grid_table(const ProbeReport& report) {
  std::vector<int> layers;
  std::vector<TapPoint> taps;
  for (const auto& c : report.cells) {
    if (std::find(layers.begin(), layers.end(), c.layer) == layers.end()) layers.push_back(c.layer);
    if (std::find(taps.begin(), taps.end(), c.tap) == taps.end()) taps.push_back(c.tap);
  }
  constexpr std::size_t kCol = 20;
  std::string out = "val R^2 by layer and tap (mean +- stderr, " + std::to_string(report.n_runs) +
                    " runs)\n" + pad("layer", 7);
  for (TapPoint t : taps) out += pad(std::string(to_string(t)), kCol);
  out += "\n";
  for (int l : layers) {
    out += pad(std::to_string(l), 7);
    for (TapPoint t : taps) {
      const auto it = std::find_if(report.cells.begin(), report.cells.end(),
                                   [&](const ProbeCell& c) { return c.layer == l && c.tap == t; });
      std::string cell = "-";
      if (it != report.cells.end())
        cell = it->present ? fixed(it->r2_mean) + " +- " + fixed(it->r2_stderr) : "absent";
      out += pad(cell, kCol);
    }
    out += "\n";
  }
  for (const auto& c : report.cells)
    if (!c.present)
      out += "absent: layer " + std::to_string(c.layer) + " " + std::string(to_string(c.tap)) +
             " (" + c.reason + ")\n";
  return out;
}

std::string format_unit_table(const UnitScores& scores, int layer, TapPoint tap,
                              std::size_t top_n, std::size_t m) {
  const UnitRanking ranking(scores.r2);
  top_n = std::min(top_n, scores.r2.size());
  m = std::min(m, scores.r2.size());
  std::string out = "per-unit val R^2, layer " + std::to_string(layer) + " " +
                    std::string(to_string(tap)) + "\n";
  out += pad("rank", 6) + "score (unit)\n";
  const auto top = ranking.top_k(top_n);
  for (std::size_t i = 0; i < top.size(); ++i)
    out += pad(std::to_string(i + 1), 6) + fixed(scores.r2[top[i]]) + " (" +
           std::to_string(top[i]) + ")\n";
  if (m > 0) out += pad("Avg-" + std::to_string(m), 6) + " " + fixed(ranking.avg_top_m(m)) + "\n";
  return out;
}

namespace {

std::vector<std::string> selection_names(const SweepResult& sweep) {
  std::vector<std::string> names;
  for (const auto& c : sweep.cells)
    if (std::find(names.begin(), names.end(), c.selection) == names.end())
      names.push_back(c.selection);
  return names;
}

std::vector<double> sweep_scales(const SweepResult& sweep) {
  std::vector<double> scales;
  for (const auto& c : sweep.cells)
    if (std::find(scales.begin(), scales.end(), c.scale) == scales.end()) scales.push_back(c.scale);
  std::sort(scales.begin(), scales.end());
  return scales;
}

}  // namespace

std::string sweep_series_csv(const SweepResult& sweep, bool rouge) {
  const auto names = selection_names(sweep);
  std::string out = "scale";
  for (const auto& n : names) out += "," + n + "," + n + "_stderr";
  out += "\n";
  for (double s : sweep_scales(sweep)) {
    out += format_real(s);
    for (const auto& n : names) {
      const auto& e = sweep.cell(n, s).eval;
      const auto& ms = rouge ? e.rouge_f : e.delta_cr;
      out += "," + format_real(ms.mean) + "," + format_real(ms.stderr_);
    }
    out += "\n";
  }
  return out;
}

std::string format_sweep_table(const SweepResult& sweep) {
  std::string out = "intervention sweep, layer " + std::to_string(sweep.layer) + " " +
                    std::string(to_string(sweep.tap)) + ", " + sweep.decode + ", " +
                    std::string(to_string(sweep.scope)) + ", " +
                    std::to_string(sweep.example_ids.size()) + " " + sweep.prompt_kind +
                    " prompts\n";
  out += pad("selection", 14) + pad("scale", 8) + pad("delta_cr", 20) + pad("rouge_l", 20) +
         "mean length\n";
  for (const auto& n : selection_names(sweep))
    for (double s : sweep_scales(sweep)) {
      const auto& e = sweep.cell(n, s).eval;
      out += pad(n, 14) + pad(format_real(s), 8) +
             pad(fixed(e.delta_cr.mean) + " +- " + fixed(e.delta_cr.stderr_), 20) +
             pad(fixed(e.rouge_f.mean) + " +- " + fixed(e.rouge_f.stderr_), 20) +
             fixed(e.gen_len.mean, 2) + "\n";
    }
  return out;
}

ReportSummary write_report(const fs::path& run_dir, const ExperimentConfig& config) {
  ReportSummary rs;
  auto emit = [&](const fs::path& rel, const std::string& text) {
    write_text_file(run_dir / rel, text);
    rs.files.push_back(rel);
  };
  std::string& text = rs.text;
  text = "lenrep report\n\n";

  if (fs::exists(run_dir / paths::kAccuracy)) {
    const auto acc = nlohmann::json::parse(read_text_file(run_dir / paths::kAccuracy));
    text += "held-out teacher-forced accuracy (token / sequence)\n";
    for (const auto& [phase, kinds] : acc.items())
      for (const auto& [kind, a] : kinds.items())
        text += "  " + pad(phase, 10) + pad(kind, 15) +
                fixed(a.at("token_accuracy").get<double>()) + " / " +
                fixed(a.at("sequence_accuracy").get<double>()) + "\n";
    text += "\n";
  } else {
    rs.gaps.push_back("evaluate: absent");
  }

  if (fs::exists(run_dir / paths::kGridJson)) {
    const auto grid = format_grid_table(read_probe_report(run_dir / paths::kGridJson));
    emit("report/grid.txt", grid);
    text += grid + "\n";
  } else {
    rs.gaps.push_back("probe grid: absent");
  }

  if (fs::exists(run_dir / paths::kUnitsJson)) {
    const auto units = format_unit_table(read_unit_scores(run_dir / paths::kUnitsJson),
                                         config.rank_layer, config.rank_tap, 5, config.top_m);
    emit("report/units.txt", units);
    text += units + "\n";
  } else {
    rs.gaps.push_back("units: absent");
  }

  bool any_sweep = false;
  for (const auto& decode : config.sweep_decodes) {
    const fs::path stem = paths::sweep_stem(decode);
    fs::path json_path = run_dir / stem;
    json_path += ".json";
    if (!fs::exists(json_path)) {
      rs.gaps.push_back("sweep: absent (" + decode.describe() + ")");
      continue;
    }
    any_sweep = true;
    const auto sweep = read_sweep(json_path);
    const std::string tag = stem.filename().string();
    emit(fs::path("report") / ("sweep-" + tag + "-delta_cr.csv"), sweep_series_csv(sweep, false));
    emit(fs::path("report") / ("sweep-" + tag + "-rouge_l.csv"), sweep_series_csv(sweep, true));
    const auto table = format_sweep_table(sweep);
    emit(fs::path("report") / ("sweep-" + tag + ".txt"), table);
    text += table + "\n";
  }
  if (!any_sweep && config.sweep_decodes.empty()) rs.gaps.push_back("sweep: absent");

  for (const auto& g : rs.gaps) text += g + "\n";
  emit("report/summary.txt", text);
  return rs;
}

}  // namespace lenrep
