// Copyright 2026 The lenrep Authors
// SPDX-License-Identifier: Apache-2.0
// Fixtures shared by the unit tests.
#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "lenrep/capture.hpp"
#include "lenrep/model.hpp"

namespace lenrep::testing {

inline ModelConfig tiny_model_config(std::uint64_t seed = 11) {
  ModelConfig c;
  c.n_layers = 3;
  c.d_model = 32;
  c.n_heads = 4;
  c.d_ffn = 64;
  c.max_context = 96;
  c.seed = seed;
  return c;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("lenrep-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// One (layer 1, attn_out) cell over sequences of 1..20 steps. Unit
/// `signal_unit` holds timestep + N(0, noise) when signal_unit >= 0; every
/// other unit is N(0, 1).
inline ActivationDataset planted_dataset(std::size_t n_records, int signal_unit, double noise,
                                         std::size_t d_model = 128, std::uint64_t seed = 3) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> len(1, 20);
  std::normal_distribution<double> gauss(0.0, 1.0);
  ActivationDataset ds;
  ds.d_model = d_model;
  ds.layers = {1};
  ds.taps = {TapPoint::AttnOut};
  std::vector<std::uint32_t> ids;
  for (std::uint32_t ex = 0; ds.keys.size() < n_records; ++ex) {
    ids.push_back(ex);
    const int n = len(rng);
    for (int t = 1; t <= n && ds.keys.size() < n_records; ++t)
      ds.keys.push_back({ex, static_cast<std::uint32_t>(t)});
  }
  Matrix g(ds.keys.size(), d_model);
  for (std::size_t i = 0; i < ds.keys.size(); ++i)
    for (std::size_t j = 0; j < d_model; ++j)
      g(i, j) = static_cast<int>(j) == signal_unit
                    ? static_cast<float>(ds.keys[i].timestep + noise * gauss(rng))
                    : static_cast<float>(gauss(rng));
  ds.groups.push_back(std::move(g));
  ds.provenance = {"planted", "priming", "greedy/64"};
  split_examples(ds, ids, 0.1, seed + 1);
  return ds;
}

}  // namespace lenrep::testing
