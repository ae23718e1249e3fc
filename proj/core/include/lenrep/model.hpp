// Copyright 2026 The lenrep Authors
// SPDX-License-Identifier: Apache-2.0

// Decoder-only transformer with pre-normalization blocks:
//
//   attn_out   = MH(LN(x))            (AttnOut)
//   attn_resid = x + attn_out         (AttnResidual)
//   mlp_out    = FFN(LN(attn_resid))  (MlpOut, ReLU feed-forward)
//   mlp_resid  = attn_resid + mlp_out (MlpResidual)
//
// Token and learned positional embeddings feed the first block. The four
// per-layer values are exposed to a TapHook as they are computed.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lenrep/corpus.hpp"
#include "lenrep/tensor.hpp"

namespace lenrep {

enum class TapPoint { AttnOut = 0, AttnResidual = 1, MlpOut = 2, MlpResidual = 3 };
inline constexpr std::array<TapPoint, 4> kAllTaps = {TapPoint::AttnOut, TapPoint::AttnResidual,
                                                     TapPoint::MlpOut, TapPoint::MlpResidual};

std::string_view to_string(TapPoint tap);
TapPoint parse_tap(std::string_view text);

struct ModelConfig {
  int n_layers = 6;
  int d_model = 128;
  int n_heads = 4;
  int d_ffn = 512;
  int max_context = 128;
  int vocab_size = Vocab::kSize;
  std::uint64_t seed = 1;

  void validate() const;
  /// Closed-form number of trainable floats.
  std::size_t parameter_count() const noexcept;
  int head_dim() const noexcept { return d_model / n_heads; }

  bool operator==(const ModelConfig&) const = default;
};

struct TensorInfo {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t offset = 0;  // in floats
};

/// Names, shapes and offsets of every parameter tensor in the flat buffer.
std::vector<TensorInfo> parameter_layout(const ModelConfig& config);

/// Views of one parameter (or gradient) buffer, arranged by role.
template <typename Ref>
struct LayerTensors {
  Ref ln1_gain, ln1_bias, wq, wk, wv, wo, ln2_gain, ln2_bias, w1, b1, w2, b2;
};

template <typename Ref>
struct ModelTensors {
  Ref tok_emb, pos_emb;
  std::vector<LayerTensors<Ref>> layers;
  Ref lnf_gain, lnf_bias, lm_head;
};

ModelTensors<MatrixRef> bind_tensors(const ModelConfig& config, std::span<float> buffer);
ModelTensors<ConstMatrixRef> bind_tensors(const ModelConfig& config, std::span<const float> buffer);

/// Location of a tap value being computed. Layers are 1-based.
struct TapSite {
  int layer = 1;
  TapPoint tap = TapPoint::AttnOut;
  std::size_t position = 0;
};

/// Observer for tap values during inference. AttnOut and MlpOut rows may be
/// modified in place; the modification feeds the residual add and everything
/// downstream of it, including cached keys and values.
class TapHook {
 public:
  virtual ~TapHook() = default;
  virtual void on_tap(const TapSite& site, std::span<float> values) = 0;
};

/// Per-sequence key/value cache for incremental decoding.
class KvCache {
 public:
  explicit KvCache(const ModelConfig& config);

  std::size_t length() const noexcept { return length_; }
  std::size_t capacity() const noexcept { return capacity_; }
  void clear() noexcept { length_ = 0; }

 private:
  friend class Model;
  std::size_t length_ = 0;
  std::size_t capacity_ = 0;
  std::vector<Matrix> keys;    // per layer, capacity x d_model
  std::vector<Matrix> values;  // per layer, capacity x d_model
};

/// Several sequences packed row-wise into one batch.
struct PackedBatch {
  TokenSequence tokens;
  std::vector<std::size_t> offsets;  // segment i spans [offsets[i], offsets[i+1])

  void add(std::span<const TokenId> seq);
  std::size_t segments() const noexcept { return offsets.empty() ? 0 : offsets.size() - 1; }
  std::size_t rows() const noexcept { return tokens.size(); }
};

/// Tap values of every layer and position from a full forward pass.
struct TapBundle {
  // taps[layer - 1][tap] is positions x d_model
  std::vector<std::array<Matrix, 4>> taps;

  const Matrix& at(int layer, TapPoint tap) const {
    return taps.at(static_cast<std::size_t>(layer - 1))[static_cast<std::size_t>(tap)];
  }
};

struct ForwardResult {
  Matrix logits;  // positions x vocab
  TapBundle taps;
};

struct ForwardCache;

class Model {
 public:
  /// Deterministic initialization from config.seed.
  explicit Model(const ModelConfig& config);
  Model(const ModelConfig& config, std::vector<float> parameters);

  const ModelConfig& config() const noexcept { return config_; }
  std::span<const float> parameters() const noexcept { return params_; }
  std::span<float> parameters() noexcept { return params_; }

  /// Full causal forward pass over one sequence; returns logits and all taps.
  ForwardResult forward(std::span<const TokenId> tokens) const;

  /// Appends `tokens` to the cached sequence and returns the logits of the
  /// last appended position. Hooks see every new row.
  std::vector<float> step(KvCache& cache, std::span<const TokenId> tokens,
                          TapHook* hook = nullptr) const;

  /// Packed forward pass for training; `cache` receives the activations that
  /// backward() needs. Returns the final-normalized rows (rows x d_model).
  void forward_train(const PackedBatch& batch, ForwardCache& cache) const;
  /// Accumulates parameter gradients given d(loss)/d(final-normalized rows).
  void backward(const PackedBatch& batch, const ForwardCache& cache, const Matrix& d_final,
                std::span<float> grads) const;

  /// SHA-256 over config and parameter bytes.
  std::string checksum() const;

 private:
  ModelConfig config_;
  std::vector<float> params_;
};

struct LayerCache {
  Matrix x_in, xhat1, n1, q, k, v, attn_concat, xhat2, n2, hidden, hidden_relu;
  std::vector<float> rstd1, rstd2;
  std::vector<float> probs;  // per segment, per head, lower-triangular len x len
};

struct ForwardCache {
  std::vector<LayerCache> layers;
  Matrix x_final, xhat_final, n_final;
  std::vector<float> rstd_final;
};

/// Checkpoint = `<stem>.bin` (little-endian float32 tensors, back to back) and
/// `<stem>.manifest` (config plus name, shape, byte offset per tensor).
void save_checkpoint(const Model& model, const std::filesystem::path& stem);
Model load_checkpoint(const std::filesystem::path& stem);
/// Hash identifying a saved checkpoint (SHA-256 of its manifest, which embeds
/// the SHA-256 of the tensor archive).
std::string checkpoint_hash(const std::filesystem::path& stem);

}  // namespace lenrep
