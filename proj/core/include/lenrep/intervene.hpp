// Copyright 2026 The lenrep Authors
// SPDX-License-Identifier: Apache-2.0
// Multiplicative scaling of selected hidden units at an attention or
// feed-forward output while generating.
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "lenrep/decode.hpp"
#include "lenrep/metrics.hpp"
#include "lenrep/probe.hpp"

namespace lenrep {

enum class PositionScope { AllGenerated, FirstGeneratedOnly };

std::string_view to_string(PositionScope scope);
PositionScope parse_position_scope(std::string_view text);

struct InterventionSpec {
  int layer = 2;
  TapPoint tap = TapPoint::AttnOut;
  std::vector<std::size_t> units;
  double scale = 1.0;
  PositionScope scope = PositionScope::AllGenerated;

  /// Throws Config for a residual tap, a layer outside the model, or a unit
  /// index >= d_model.
  void validate(const ModelConfig& model) const;
  std::string describe() const;
};

/// Scales the intervention's units at generated positions. Decoding only shows the
/// hook positions after the prompt, so prompt rows are never touched.
class ScalingHook final : public TapHook {
 public:
  ScalingHook(const InterventionSpec& spec, std::size_t prompt_len);
  void on_tap(const TapSite& site, std::span<float> values) override;
  /// Number of rows that were scaled.
  std::size_t applications() const noexcept { return applications_; }

 private:
  const InterventionSpec& spec_;
  std::size_t prompt_len_;
  float scale_;
  std::size_t applications_ = 0;
};

GenerationOutput generate_with_intervention(const Model& model, const TokenSequence& prompt,
                                            const InterventionSpec& spec,
                                            const DecodeConfig& decode,
                                            const CaptureRequest* capture = nullptr);

struct Selection {
  std::string name;  // e.g. "top-10", "smallest-10"
  std::vector<std::size_t> units;
};

/// top-k and smallest-k selections for every k.
std::vector<Selection> selections_from(const UnitRanking& ranking,
                                       const std::vector<std::size_t>& k_list);

inline const std::vector<double> kDefaultScales = {-10, -5, -2, 1, 2, 5, 10};

struct SweepCell {
  double scale = 1.0;
  std::string selection;
  std::vector<std::size_t> units;
  std::vector<TokenSequence> outputs;  // per prompt
  EvalReport eval;
};

struct SweepResult {
  int layer = 2;
  TapPoint tap = TapPoint::AttnOut;
  PositionScope scope = PositionScope::AllGenerated;
  std::string prompt_kind;
  std::string decode;
  std::vector<std::uint32_t> example_ids;
  std::vector<SweepCell> cells;  // selection-major, ascending scale

  const SweepCell& cell(const std::string& selection, double scale) const;
};

/// Every selection at every scale (1 is added when missing), each evaluated
/// against the examples' gold summaries. Cells run in parallel when
/// `threads` > 1 without changing the result.
SweepResult sweep_intervention(const Model& model, const std::vector<CompressionExample>& examples,
                               PromptKind kind, const InterventionSpec& spec_template,
                               std::vector<double> scales, const std::vector<Selection>& selections,
                               const DecodeConfig& decode, unsigned threads = 1);

/// JSON with per-cell outputs and metrics, plus
/// `scale,selection,delta_cr,rouge_l,stderr_cr,stderr_rl`.
void write_sweep(const SweepResult& result, const std::filesystem::path& json_path,
                 const std::filesystem::path& csv_path);
SweepResult read_sweep(const std::filesystem::path& json_path);

}  // namespace lenrep
