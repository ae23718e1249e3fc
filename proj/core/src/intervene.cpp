// Copyright 2026 The lenrep Authors
// SPDX-License-Identifier: Apache-2.0

#include "lenrep/intervene.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

#include <nlohmann/json.hpp>

#include "lenrep/error.hpp"
#include "lenrep/io.hpp"

namespace lenrep {

std::string_view to_string(PositionScope scope) {
  return scope == PositionScope::AllGenerated ? "all-generated" : "first-generated-only";
}

PositionScope parse_position_scope(std::string_view text) {
  if (text == "all-generated") return PositionScope::AllGenerated;
  if (text == "first-generated-only") return PositionScope::FirstGeneratedOnly;
  fail(ErrorKind::Config, "unknown position scope '" + std::string(text) + "'");
}

void InterventionSpec::validate(const ModelConfig& model) const {
  if (tap != TapPoint::AttnOut && tap != TapPoint::MlpOut)
    fail(ErrorKind::Config, "interventions apply to attn_out or mlp_out only");
  if (layer < 1 || layer > model.n_layers)
    fail(ErrorKind::Config, "intervention layer " + std::to_string(layer) + " out of range");
  for (std::size_t u : units)
    if (u >= static_cast<std::size_t>(model.d_model))
      fail(ErrorKind::Config, "unit " + std::to_string(u) + " out of range for d_model " +
                                  std::to_string(model.d_model));
  if (!std::isfinite(scale)) fail(ErrorKind::Config, "intervention scale must be finite");
}

std::string InterventionSpec::describe() const {
  std::string s = "layer" + std::to_string(layer) + ":" + std::string(to_string(tap)) +
                  ":x" + format_real(scale) + ":" + std::string(to_string(scope)) + ":units=";
  for (std::size_t i = 0; i < units.size(); ++i)
    s += (i ? "," : "") + std::to_string(units[i]);
  return s;
}

ScalingHook::ScalingHook(const InterventionSpec& spec, std::size_t prompt_len)
    : spec_(spec), prompt_len_(prompt_len), scale_(static_cast<float>(spec.scale)) {}

void ScalingHook::on_tap(const TapSite& site, std::span<float> values) {
  if (site.layer != spec_.layer || site.tap != spec_.tap || site.position < prompt_len_) return;
  if (spec_.scope == PositionScope::FirstGeneratedOnly && site.position != prompt_len_) return;
  for (std::size_t u : spec_.units) values[u] *= scale_;
  ++applications_;
}

GenerationOutput generate_with_intervention(const Model& model, const TokenSequence& prompt,
                                            const InterventionSpec& spec,
                                            const DecodeConfig& decode,
                                            const CaptureRequest* capture) {
  spec.validate(model.config());
  ScalingHook hook(spec, prompt.size());
  return generate(model, prompt, decode, Hooks{capture, &hook});
}

std::vector<Selection> selections_from(const UnitRanking& ranking,
                                       const std::vector<std::size_t>& k_list) {
  std::vector<Selection> out;
  for (std::size_t k : k_list) out.push_back({"top-" + std::to_string(k), ranking.top_k(k)});
  for (std::size_t k : k_list)
    out.push_back({"smallest-" + std::to_string(k), ranking.smallest_k(k)});
  return out;
}

const SweepCell& SweepResult::cell(const std::string& selection, double scale) const {
  for (const auto& c : cells)
    if (c.selection == selection && c.scale == scale) return c;
  fail(ErrorKind::Config, "sweep has no cell " + selection + " x" + format_real(scale));
}

SweepResult sweep_intervention(const Model& model, const std::vector<CompressionExample>& examples,
                               PromptKind kind, const InterventionSpec& spec_template,
                               std::vector<double> scales, const std::vector<Selection>& selections,
                               const DecodeConfig& decode, unsigned threads) {
  decode.validate();
  if (examples.empty()) fail(ErrorKind::Data, "sweep needs at least one prompt");
  if (std::find(scales.begin(), scales.end(), 1.0) == scales.end()) scales.push_back(1.0);
  std::sort(scales.begin(), scales.end());
  scales.erase(std::unique(scales.begin(), scales.end()), scales.end());

  SweepResult result;
  result.layer = spec_template.layer;
  result.tap = spec_template.tap;
  result.scope = spec_template.scope;
  result.prompt_kind = std::string(to_string(kind));
  result.decode = decode.describe();
  std::vector<TokenSequence> prompts, golds, sources;
  for (const auto& ex : examples) {
    result.example_ids.push_back(ex.id);
    prompts.push_back(render_prompt(ex, kind));
    golds.push_back(ex.gold);
    sources.push_back(ex.source);
  }

  std::vector<InterventionSpec> specs;
  for (const auto& sel : selections) {
    for (double s : scales) {
      InterventionSpec spec = spec_template;
      spec.units = sel.units;
      spec.scale = s;
      spec.validate(model.config());
      specs.push_back(spec);
      SweepCell cell;
      cell.scale = s;
      cell.selection = sel.name;
      cell.units = sel.units;
      result.cells.push_back(std::move(cell));
    }
  }

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t c = next++; c < result.cells.size(); c = next++) {
      std::vector<GenerationOutput> outs;
      for (const auto& p : prompts)
        outs.push_back(generate_with_intervention(model, p, specs[c], decode));
      auto& cell = result.cells[c];
      cell.eval = evaluate_run(outs, golds, sources);
      cell.eval.prompt_kind = result.prompt_kind;
      cell.eval.decode = result.decode;
      cell.eval.intervention = specs[c].describe();
      for (auto& o : outs) cell.outputs.push_back(std::move(o.generated));
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  return result;
}

void write_sweep(const SweepResult& result, const std::filesystem::path& json_path,
                 const std::filesystem::path& csv_path) {
  nlohmann::json j = {{"layer", result.layer},
                      {"tap", to_string(result.tap)},
                      {"scope", to_string(result.scope)},
                      {"prompt_kind", result.prompt_kind},
                      {"decode", result.decode},
                      {"example_ids", result.example_ids}};
  auto& cells = j["cells"] = nlohmann::json::array();
  std::string csv = "scale,selection,delta_cr,rouge_l,stderr_cr,stderr_rl\n";
  for (const auto& c : result.cells) {
    cells.push_back({{"scale", c.scale},
                     {"selection", c.selection},
                     {"units", c.units},
                     {"outputs", c.outputs},
                     {"delta_cr", c.eval.delta_cr.mean},
                     {"stderr_cr", c.eval.delta_cr.stderr_},
                     {"rouge_l", c.eval.rouge_f.mean},
                     {"stderr_rl", c.eval.rouge_f.stderr_},
                     {"gen_len", c.eval.gen_len.mean},
                     {"stderr_len", c.eval.gen_len.stderr_}});
    csv += format_real(c.scale) + "," + c.selection + "," + format_real(c.eval.delta_cr.mean) +
           "," + format_real(c.eval.rouge_f.mean) + "," + format_real(c.eval.delta_cr.stderr_) +
           "," + format_real(c.eval.rouge_f.stderr_) + "\n";
  }
  write_text_file(json_path, j.dump(2) + "\n");
  write_text_file(csv_path, csv);
}

SweepResult read_sweep(const std::filesystem::path& json_path) {
  try {
    const auto j = nlohmann::json::parse(read_text_file(json_path));
    SweepResult r;
    r.layer = j.at("layer").get<int>();
    r.tap = parse_tap(j.at("tap").get<std::string>());
    r.scope = parse_position_scope(j.at("scope").get<std::string>());
    r.prompt_kind = j.at("prompt_kind").get<std::string>();
    r.decode = j.at("decode").get<std::string>();
    r.example_ids = j.at("example_ids").get<std::vector<std::uint32_t>>();
    for (const auto& cj : j.at("cells")) {
      SweepCell c;
      c.scale = cj.at("scale").get<double>();
      c.selection = cj.at("selection").get<std::string>();
      c.units = cj.at("units").get<std::vector<std::size_t>>();
      c.outputs = cj.at("outputs").get<std::vector<TokenSequence>>();
      c.eval.delta_cr = {cj.at("delta_cr").get<double>(), cj.at("stderr_cr").get<double>()};
      c.eval.rouge_f = {cj.at("rouge_l").get<double>(), cj.at("stderr_rl").get<double>()};
      c.eval.gen_len = {cj.at("gen_len").get<double>(), cj.at("stderr_len").get<double>()};
      r.cells.push_back(std::move(c));
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Corruption, json_path.string() + ": " + e.what());
  }
}

}  // namespace lenrep
