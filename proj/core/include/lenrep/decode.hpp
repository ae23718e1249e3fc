// Copyright 2026 The lenrep Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "lenrep/model.hpp"

namespace lenrep {

struct Greedy {
  bool operator==(const Greedy&) const = default;
};
struct Beam {
  int width = 3;
  bool operator==(const Beam&) const = default;
};
struct TopK {
  int k = 10;
  float temperature = 1.0F;
  std::uint64_t seed = 0;
  bool operator==(const TopK&) const = default;
};

struct DecodeConfig {
  std::variant<Greedy, Beam, TopK> strategy = Greedy{};
  int max_new_tokens = 64;

  void validate() const;
  /// Stable text form, e.g. "greedy/64", "beam3/64", "topk10:t1:s5/64".
  std::string describe() const;
  static DecodeConfig parse(const std::string& text);

  bool operator==(const DecodeConfig&) const = default;
};

/// (layer, tap) pairs to record at every generation step. Layers are 1-based.
struct CaptureRequest {
  std::vector<int> layers;
  std::vector<TapPoint> taps;

  std::size_t pairs() const noexcept { return layers.size() * taps.size(); }
  /// Row of a step capture holding (layer, tap); layer-major order.
  std::size_t slot(std::size_t layer_index, std::size_t tap_index) const noexcept {
    return layer_index * taps.size() + tap_index;
  }
};

struct Hooks {
  const CaptureRequest* capture = nullptr;
  /// Invoked for every row of every forward pass after the prompt prefill,
  /// i.e. at positions holding generated tokens.
  TapHook* intervention = nullptr;
};

struct GenerationOutput {
  TokenSequence prompt;
  TokenSequence generated;  // ends with EOS when one was produced
  /// One matrix per generated token (pairs x d_model): the tap values of the
  /// forward pass whose logits emitted that token.
  std::vector<Matrix> captures;
};

GenerationOutput generate(const Model& model, const TokenSequence& prompt,
                          const DecodeConfig& config, const Hooks& hooks = {});

}  // namespace lenrep
