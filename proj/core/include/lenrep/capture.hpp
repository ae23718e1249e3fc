// Copyright 2026 The lenrep Authors
// SPDX-License-Identifier: Apache-2.0
// Tap activations recorded during generation, labeled with the 1-based step
// of the token whose forward pass produced them.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lenrep/decode.hpp"
#include "lenrep/model.hpp"

namespace lenrep {

struct RecordKey {
  std::uint32_t example_id = 0;
  std::uint32_t timestep = 0;  // 1-based
  bool operator==(const RecordKey&) const = default;
};

struct ActivationRecord {
  std::uint32_t example_id = 0;
  int layer = 1;
  TapPoint tap = TapPoint::AttnOut;
  std::uint32_t timestep = 0;
  std::span<const float> vector;
};

struct Provenance {
  std::string checkpoint_hash;
  std::string prompt_kind;
  std::string decode;
  bool operator==(const Provenance&) const = default;
};

/// Every (layer, tap) group holds one row per key, in key order
/// (example_id, timestep).
struct ActivationDataset {
  std::size_t d_model = 0;
  std::vector<int> layers;
  std::vector<TapPoint> taps;
  std::vector<RecordKey> keys;
  std::vector<Matrix> groups;  // layer-major: groups[li * taps.size() + ti]
  Provenance provenance;
  std::vector<std::uint32_t> train_examples;  // sorted
  std::vector<std::uint32_t> val_examples;    // sorted

  std::size_t record_count() const noexcept { return keys.size(); }
  bool has(int layer, TapPoint tap) const noexcept;
  /// Throws Config when the cell was not collected.
  const Matrix& group(int layer, TapPoint tap) const;
  ActivationRecord record(int layer, TapPoint tap, std::size_t index) const;
  std::vector<double> timesteps() const;
  /// Row indices of records whose example belongs to each split.
  std::vector<std::size_t> train_rows() const;
  std::vector<std::size_t> val_rows() const;

  bool operator==(const ActivationDataset&) const = default;
};

struct PromptItem {
  std::uint32_t example_id = 0;
  TokenSequence tokens;
};

struct CollectOptions {
  double val_fraction = 0.1;
  std::uint64_t split_seed = 0;
  unsigned threads = 1;
  Provenance provenance;  // decode field is filled in from the decode config
};

/// Generates from every prompt and keeps one record per generated token
/// (including the EOS step) per requested (layer, tap). A max_new_tokens of 0
/// yields a dataset with no records.
ActivationDataset collect_states(const Model& model, const std::vector<PromptItem>& prompts,
                                 const std::vector<TapPoint>& taps, const std::vector<int>& layers,
                                 const DecodeConfig& decode, const CollectOptions& options = {});

/// Seeded split of example ids; val gets round(val_fraction * n) ids, at least
/// one when n >= 2.
void split_examples(ActivationDataset& dataset, std::vector<std::uint32_t> example_ids,
                    double val_fraction, std::uint64_t seed);

/// Little-endian binary file with a trailing SHA-256 of everything before it.
void write_dataset(const ActivationDataset& dataset, const std::filesystem::path& path);
/// Throws Corruption on a bad checksum, truncation, or malformed header.
ActivationDataset read_dataset(const std::filesystem::path& path);

/// Warning text when the dataset was not produced by the given checkpoint.
std::optional<std::string> provenance_warning(const ActivationDataset& dataset,
                                              const std::string& checkpoint_hash);

}  // namespace lenrep
