// Copyright 2026 The lenrep Authors
// SPDX-License-Identifier: Apache-2.0
// Human-readable tables and plot-ready CSVs built from a run directory.
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "lenrep/intervene.hpp"
#include "lenrep/probe.hpp"

namespace lenrep {

struct ExperimentConfig;

/// Layer x tap table of mean +- stderr; absent cells print as "absent".
std::string format_grid_table(const ProbeReport& report);
/// Top-n "score (unit)" rows followed by the mean of the m best scores.
std::string format_unit_table(const UnitScores& scores, int layer, TapPoint tap,
                              std::size_t top_n = 5, std::size_t m = 30);
/// One row per scale, one column pair (mean, stderr) per selection.
std::string sweep_series_csv(const SweepResult& sweep, bool rouge);
std::string format_sweep_table(const SweepResult& sweep);

struct ReportSummary {
  std::string text;
  std::vector<std::string> gaps;           // e.g. "sweep: absent"
  std::vector<std::filesystem::path> files;  // written, relative to the run directory
};

/// Writes report/summary.txt plus the tables and CSVs for whatever results
/// exist. Missing inputs become gap lines rather than errors.
ReportSummary write_report(const std::filesystem::path& run_dir, const ExperimentConfig& config);

}  // namespace lenrep
