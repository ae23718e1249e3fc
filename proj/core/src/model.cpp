// Copyright 2026 The lenrep Authors
// SPDX-License-Identifier: Apache-2.0

#include "lenrep/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "lenrep/error.hpp"
#include "lenrep/io.hpp"
#include "lenrep/hash.hpp"

namespace lenrep {

static_assert(std::endian::native == std::endian::little,
              "checkpoint and dataset formats assume a little-endian host");

std::string_view to_string(TapPoint tap) {
  switch (tap) {
    case TapPoint::AttnOut: return "attn_out";
    case TapPoint::AttnResidual: return "attn_residual";
    case TapPoint::MlpOut: return "mlp_out";
    case TapPoint::MlpResidual: return "mlp_residual";
  }
  return "?";
}

TapPoint parse_tap(std::string_view text) {
  for (auto t : kAllTaps)
    if (to_string(t) == text) return t;
  fail(ErrorKind::Config, "unknown tap point '" + std::string(text) + "'");
}

void ModelConfig::validate() const {
  if (n_layers < 3) fail(ErrorKind::Config, "n_layers must be at least 3");
  if (d_model <= 0 || n_heads <= 0 || d_ffn <= 0 || max_context <= 0)
    fail(ErrorKind::Config, "model dimensions must be positive");
  if (d_model % n_heads != 0) fail(ErrorKind::Config, "d_model must be divisible by n_heads");
  if (vocab_size != Vocab::kSize)
    fail(ErrorKind::Config, "vocab_size " + std::to_string(vocab_size) +
                                " does not match the corpus vocabulary (" +
                                std::to_string(Vocab::kSize) + ")");
}

std::size_t ModelConfig::parameter_count() const noexcept {
  const auto d = static_cast<std::size_t>(d_model);
  const auto f = static_cast<std::size_t>(d_ffn);
  const auto v = static_cast<std::size_t>(vocab_size);
  const auto c = static_cast<std::size_t>(max_context);
  const std::size_t per_layer = 4 * d + 4 * d * d + d * f + f + f * d + d;
  return v * d + c * d + static_cast<std::size_t>(n_layers) * per_layer + 2 * d + d * v;
}

std::vector<TensorInfo> parameter_layout(const ModelConfig& config) {
  const auto d = static_cast<std::size_t>(config.d_model);
  const auto f = static_cast<std::size_t>(config.d_ffn);
  std::vector<TensorInfo> out;
  std::size_t offset = 0;
  auto add = [&](std::string name, std::size_t rows, std::size_t cols) {
    out.push_back({std::move(name), rows, cols, offset});
    offset += rows * cols;
  };
  add("tok_emb", static_cast<std::size_t>(config.vocab_size), d);
  add("pos_emb", static_cast<std::size_t>(config.max_context), d);
  for (int l = 1; l <= config.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    add(p + "ln1.gain", 1, d);
    add(p + "ln1.bias", 1, d);
    add(p + "attn.wq", d, d);
    add(p + "attn.wk", d, d);
    add(p + "attn.wv", d, d);
    add(p + "attn.wo", d, d);
    add(p + "ln2.gain", 1, d);
    add(p + "ln2.bias", 1, d);
    add(p + "ffn.w1", d, f);
    add(p + "ffn.b1", 1, f);
    add(p + "ffn.w2", f, d);
    add(p + "ffn.b2", 1, d);
  }
  add("final_ln.gain", 1, d);
  add("final_ln.bias", 1, d);
  add("lm_head", d, static_cast<std::size_t>(config.vocab_size));
  return out;
}

namespace {

template <typename Ref, typename Ptr>
ModelTensors<Ref> bind_impl(const ModelConfig& config, Ptr base, std::size_t size) {
  const auto layout = parameter_layout(config);
  if (layout.back().offset + layout.back().rows * layout.back().cols != size)
    fail(ErrorKind::Config, "parameter buffer size does not match model config");
  std::size_t i = 0;
  auto next = [&]() -> Ref {
    const auto& t = layout[i++];
    return Ref{base + t.offset, t.rows, t.cols};
  };
  ModelTensors<Ref> m;
  m.tok_emb = next();
  m.pos_emb = next();
  m.layers.resize(static_cast<std::size_t>(config.n_layers));
  for (auto& l : m.layers) {
    l.ln1_gain = next();
    l.ln1_bias = next();
    l.wq = next();
    l.wk = next();
    l.wv = next();
    l.wo = next();
    l.ln2_gain = next();
    l.ln2_bias = next();
    l.w1 = next();
    l.b1 = next();
    l.w2 = next();
    l.b2 = next();
  }
  m.lnf_gain = next();
  m.lnf_bias = next();
  m.lm_head = next();
  return m;
}

constexpr float kLnEps = 1e-5F;

void layer_norm(ConstMatrixRef x, ConstMatrixRef gain, ConstMatrixRef bias, Matrix& y,
                Matrix* xhat, std::vector<float>* rstd) {
  const std::size_t d = x.cols;
  if (y.rows() != x.rows || y.cols() != d) y.resize(x.rows, d);
  if (xhat && (xhat->rows() != x.rows || xhat->cols() != d)) xhat->resize(x.rows, d);
  if (rstd) rstd->assign(x.rows, 0.0F);
  for (std::size_t i = 0; i < x.rows; ++i) {
    const float* in = x.data + i * d;
    float mean = 0.0F;
    for (std::size_t j = 0; j < d; ++j) mean += in[j];
    mean /= static_cast<float>(d);
    float var = 0.0F;
    for (std::size_t j = 0; j < d; ++j) var += (in[j] - mean) * (in[j] - mean);
    var /= static_cast<float>(d);
    const float rs = 1.0F / std::sqrt(var + kLnEps);
    float* out = y.data() + i * d;
    for (std::size_t j = 0; j < d; ++j) {
      const float h = (in[j] - mean) * rs;
      if (xhat) (*xhat)(i, j) = h;
      out[j] = h * gain.data[j] + bias.data[j];
    }
    if (rstd) (*rstd)[i] = rs;
  }
}

// dx for y = xhat * gain + bias; also accumulates gain/bias gradients.
void layer_norm_backward(const Matrix& dy, const Matrix& xhat, const std::vector<float>& rstd,
                         ConstMatrixRef gain, MatrixRef d_gain, MatrixRef d_bias, Matrix& dx,
                         bool accumulate) {
  const std::size_t d = dy.cols();
  if (!accumulate) dx.resize(dy.rows(), d);
  std::vector<float> dxhat(d);
  for (std::size_t i = 0; i < dy.rows(); ++i) {
    const float* g = dy.data() + i * d;
    const float* h = xhat.data() + i * d;
    float mean_dxhat = 0.0F;
    float mean_dxhat_h = 0.0F;
    for (std::size_t j = 0; j < d; ++j) {
      dxhat[j] = g[j] * gain.data[j];
      d_gain.data[j] += g[j] * h[j];
      d_bias.data[j] += g[j];
      mean_dxhat += dxhat[j];
      mean_dxhat_h += dxhat[j] * h[j];
    }
    mean_dxhat /= static_cast<float>(d);
    mean_dxhat_h /= static_cast<float>(d);
    float* out = dx.data() + i * d;
    for (std::size_t j = 0; j < d; ++j)
      out[j] += rstd[i] * (dxhat[j] - mean_dxhat - h[j] * mean_dxhat_h);
  }
}

struct AttnSegment {
  std::size_t row_begin = 0;  // first query row in q / out
  std::size_t rows = 0;
  std::size_t past = 0;  // cached positions before the first query row
  const float* keys = nullptr;    // (past + rows) x d_model
  const float* values = nullptr;  // (past + rows) x d_model
  float* probs = nullptr;         // optional heads x rows x (past + rows)
};

void attention(const Matrix& q, std::span<const AttnSegment> segments, int n_heads, Matrix& out) {
  const std::size_t d = q.cols();
  const std::size_t dh = d / static_cast<std::size_t>(n_heads);
  const float scale = 1.0F / std::sqrt(static_cast<float>(dh));
  if (out.rows() != q.rows() || out.cols() != d) out.resize(q.rows(), d);
  std::vector<float> scores;
  for (const auto& seg : segments) {
    const std::size_t total = seg.past + seg.rows;
    scores.resize(total);
    for (std::size_t r = 0; r < seg.rows; ++r) {
      const std::size_t n_keys = seg.past + r + 1;
      const float* qrow = q.data() + (seg.row_begin + r) * d;
      float* orow = out.data() + (seg.row_begin + r) * d;
      for (std::size_t h = 0; h < static_cast<std::size_t>(n_heads); ++h) {
        const float* qh = qrow + h * dh;
        float mx = -INFINITY;
        for (std::size_t j = 0; j < n_keys; ++j) {
          const float* kh = seg.keys + j * d + h * dh;
          float s = 0.0F;
          for (std::size_t c = 0; c < dh; ++c) s += qh[c] * kh[c];
          s *= scale;
          scores[j] = s;
          mx = std::max(mx, s);
        }
        float sum = 0.0F;
        for (std::size_t j = 0; j < n_keys; ++j) {
          scores[j] = std::exp(scores[j] - mx);
          sum += scores[j];
        }
        const float inv = 1.0F / sum;
        float* oh = orow + h * dh;
        std::fill(oh, oh + dh, 0.0F);
        for (std::size_t j = 0; j < n_keys; ++j) {
          const float p = scores[j] * inv;
          const float* vh = seg.values + j * d + h * dh;
          for (std::size_t c = 0; c < dh; ++c) oh[c] += p * vh[c];
          if (seg.probs) seg.probs[(h * seg.rows + r) * total + j] = p;
        }
      }
    }
  }
}

void add_into(Matrix& dst, const Matrix& a, const Matrix& b) {
  if (dst.rows() != a.rows() || dst.cols() != a.cols()) dst.resize(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) dst.data()[i] = a.data()[i] + b.data()[i];
}

void notify(TapHook* hook, int layer, TapPoint tap, std::size_t first_position, Matrix& rows) {
  if (!hook) return;
  for (std::size_t r = 0; r < rows.rows(); ++r)
    hook->on_tap({layer, tap, first_position + r}, rows.row(r));
}

// Records every tap row it sees.
class RecordingHook final : public TapHook {
 public:
  explicit RecordingHook(TapBundle& bundle) : bundle_(bundle) {}
  void on_tap(const TapSite& site, std::span<float> values) override {
    Matrix& m = bundle_.taps[static_cast<std::size_t>(site.layer - 1)]
                           [static_cast<std::size_t>(site.tap)];
    std::copy(values.begin(), values.end(), m.row(site.position).begin());
  }

 private:
  TapBundle& bundle_;
};

}  // namespace

ModelTensors<MatrixRef> bind_tensors(const ModelConfig& config, std::span<float> buffer) {
  return bind_impl<MatrixRef>(config, buffer.data(), buffer.size());
}

ModelTensors<ConstMatrixRef> bind_tensors(const ModelConfig& config,
                                          std::span<const float> buffer) {
  return bind_impl<ConstMatrixRef>(config, buffer.data(), buffer.size());
}

KvCache::KvCache(const ModelConfig& config)
    : capacity_(static_cast<std::size_t>(config.max_context)) {
  for (int l = 0; l < config.n_layers; ++l) {
    keys.emplace_back(capacity_, static_cast<std::size_t>(config.d_model));
    values.emplace_back(capacity_, static_cast<std::size_t>(config.d_model));
  }
}

void PackedBatch::add(std::span<const TokenId> seq) {
  if (offsets.empty()) offsets.push_back(0);
  tokens.insert(tokens.end(), seq.begin(), seq.end());
  offsets.push_back(tokens.size());
}

Model::Model(const ModelConfig& config) : config_(config) {
  config_.validate();
  params_.assign(config_.parameter_count(), 0.0F);
  auto t = bind_tensors(config_, std::span<float>(params_));
  std::mt19937_64 rng(config_.seed);
  const float d = static_cast<float>(config_.d_model);
  const float depth = std::sqrt(2.0F * static_cast<float>(config_.n_layers));
  std::normal_distribution<float> unit(0.0F, 1.0F);
  std::normal_distribution<float> from_d(0.0F, 1.0F / std::sqrt(d));
  std::normal_distribution<float> proj_d(0.0F, 1.0F / std::sqrt(d) / depth);
  std::normal_distribution<float> proj_ffn(0.0F, 1.0F / std::sqrt(static_cast<float>(config_.d_ffn)) / depth);
  auto fill = [&](MatrixRef m, auto& dist) {
    for (auto& x : m.flat()) x = dist(rng);
  };
  auto ones = [](MatrixRef m) { std::fill(m.flat().begin(), m.flat().end(), 1.0F); };
  fill(t.tok_emb, unit);
  // Position embeddings are learned but start from the sinusoidal table.
  for (std::size_t p = 0; p < t.pos_emb.rows; ++p)
    for (std::size_t j = 0; j < t.pos_emb.cols; ++j) {
      const double freq = std::pow(10000.0, -static_cast<double>(j - j % 2) / d);
      const double angle = static_cast<double>(p) * freq;
      t.pos_emb(p, j) = static_cast<float>(j % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  for (auto& l : t.layers) {
    ones(l.ln1_gain);
    fill(l.wq, from_d);
    fill(l.wk, from_d);
    fill(l.wv, from_d);
    fill(l.wo, proj_d);
    ones(l.ln2_gain);
    fill(l.w1, from_d);
    fill(l.w2, proj_ffn);
  }
  ones(t.lnf_gain);
  fill(t.lm_head, from_d);
}

Model::Model(const ModelConfig& config, std::vector<float> parameters)
    : config_(config), params_(std::move(parameters)) {
  config_.validate();
  if (params_.size() != config_.parameter_count())
    fail(ErrorKind::Config, "parameter count does not match model config");
}

std::vector<float> Model::step(KvCache& cache, std::span<const TokenId> tokens,
                               TapHook* hook) const {
  if (tokens.empty()) fail(ErrorKind::Config, "step() needs at least one token");
  if (cache.length_ + tokens.size() > cache.capacity_)
    fail(ErrorKind::Length, "sequence of " + std::to_string(cache.length_ + tokens.size()) +
                                " tokens exceeds max_context " +
                                std::to_string(cache.capacity_));
  const auto t = bind_tensors(config_, std::span<const float>(params_));
  const std::size_t d = static_cast<std::size_t>(config_.d_model);
  const std::size_t n = tokens.size();
  const std::size_t past = cache.length_;

  Matrix x(n, d);
  for (std::size_t r = 0; r < n; ++r) {
    const auto tok = tokens[r];
    if (tok < 0 || tok >= config_.vocab_size) fail(ErrorKind::Config, "token id out of range");
    const auto e = t.tok_emb.row(static_cast<std::size_t>(tok));
    const auto p = t.pos_emb.row(past + r);
    for (std::size_t j = 0; j < d; ++j) x(r, j) = e[j] + p[j];
  }

  Matrix n1, q, k, v, concat, attn_out, resid, n2, hidden, mlp_out;
  for (std::size_t l = 0; l < t.layers.size(); ++l) {
    const auto& w = t.layers[l];
    const int layer = static_cast<int>(l) + 1;
    layer_norm(x, w.ln1_gain, w.ln1_bias, n1, nullptr, nullptr);
    matmul(n1, w.wq, q);
    matmul(n1, w.wk, k);
    matmul(n1, w.wv, v);
    std::copy(k.values().begin(), k.values().end(), cache.keys[l].row(past).begin());
    std::copy(v.values().begin(), v.values().end(), cache.values[l].row(past).begin());
    const AttnSegment seg{0, n, past, cache.keys[l].data(), cache.values[l].data(), nullptr};
    attention(q, {&seg, 1}, config_.n_heads, concat);
    matmul(concat, w.wo, attn_out);
    notify(hook, layer, TapPoint::AttnOut, past, attn_out);
    add_into(resid, x, attn_out);
    notify(hook, layer, TapPoint::AttnResidual, past, resid);
    layer_norm(resid, w.ln2_gain, w.ln2_bias, n2, nullptr, nullptr);
    matmul(n2, w.w1, hidden);
    add_row_bias(hidden, w.b1.flat());
    for (auto& h : hidden.values()) h = std::max(h, 0.0F);
    matmul(hidden, w.w2, mlp_out);
    add_row_bias(mlp_out, w.b2.flat());
    notify(hook, layer, TapPoint::MlpOut, past, mlp_out);
    add_into(x, resid, mlp_out);
    notify(hook, layer, TapPoint::MlpResidual, past, x);
  }
  cache.length_ += n;

  Matrix last(1, d);
  std::copy(x.row(n - 1).begin(), x.row(n - 1).end(), last.row(0).begin());
  Matrix normed, logits;
  layer_norm(last, t.lnf_gain, t.lnf_bias, normed, nullptr, nullptr);
  matmul(normed, t.lm_head, logits);
  return logits.values();
}

ForwardResult Model::forward(std::span<const TokenId> tokens) const {
  const std::size_t d = static_cast<std::size_t>(config_.d_model);
  ForwardResult result;
  result.taps.taps.resize(static_cast<std::size_t>(config_.n_layers));
  for (auto& layer : result.taps.taps)
    for (auto& m : layer) m.resize(tokens.size(), d);
  result.logits.resize(tokens.size(), static_cast<std::size_t>(config_.vocab_size));
  if (tokens.empty()) return result;

  KvCache cache(config_);
  RecordingHook hook(result.taps);
  step(cache, tokens, &hook);

  // Logits for every position from the recorded final residual stream.
  const auto t = bind_tensors(config_, std::span<const float>(params_));
  Matrix normed;
  layer_norm(result.taps.at(config_.n_layers, TapPoint::MlpResidual), t.lnf_gain, t.lnf_bias,
             normed, nullptr, nullptr);
  matmul(normed, t.lm_head, result.logits);
  return result;
}

void Model::forward_train(const PackedBatch& batch, ForwardCache& fc) const {
  const auto t = bind_tensors(config_, std::span<const float>(params_));
  const std::size_t d = static_cast<std::size_t>(config_.d_model);
  const std::size_t n = batch.rows();
  const std::size_t heads = static_cast<std::size_t>(config_.n_heads);
  fc.layers.resize(t.layers.size());

  Matrix x(n, d);
  for (std::size_t s = 0; s < batch.segments(); ++s) {
    const std::size_t begin = batch.offsets[s];
    const std::size_t len = batch.offsets[s + 1] - begin;
    if (len > static_cast<std::size_t>(config_.max_context))
      fail(ErrorKind::Length, "training sequence exceeds max_context");
    for (std::size_t r = 0; r < len; ++r) {
      const auto tok = batch.tokens[begin + r];
      const auto e = t.tok_emb.row(static_cast<std::size_t>(tok));
      const auto p = t.pos_emb.row(r);
      for (std::size_t j = 0; j < d; ++j) x(begin + r, j) = e[j] + p[j];
    }
  }

  Matrix attn_out, resid, mlp_out;
  for (std::size_t l = 0; l < t.layers.size(); ++l) {
    const auto& w = t.layers[l];
    auto& c = fc.layers[l];
    c.x_in = x;
    layer_norm(x, w.ln1_gain, w.ln1_bias, c.n1, &c.xhat1, &c.rstd1);
    matmul(c.n1, w.wq, c.q);
    matmul(c.n1, w.wk, c.k);
    matmul(c.n1, w.wv, c.v);

    std::size_t probs_size = 0;
    for (std::size_t s = 0; s < batch.segments(); ++s) {
      const std::size_t len = batch.offsets[s + 1] - batch.offsets[s];
      probs_size += heads * len * len;
    }
    c.probs.assign(probs_size, 0.0F);
    std::vector<AttnSegment> segs;
    std::size_t probs_offset = 0;
    for (std::size_t s = 0; s < batch.segments(); ++s) {
      const std::size_t begin = batch.offsets[s];
      const std::size_t len = batch.offsets[s + 1] - begin;
      segs.push_back({begin, len, 0, c.k.data() + begin * d, c.v.data() + begin * d,
                      c.probs.data() + probs_offset});
      probs_offset += heads * len * len;
    }
    attention(c.q, segs, config_.n_heads, c.attn_concat);
    matmul(c.attn_concat, w.wo, attn_out);
    add_into(resid, x, attn_out);
    layer_norm(resid, w.ln2_gain, w.ln2_bias, c.n2, &c.xhat2, &c.rstd2);
    matmul(c.n2, w.w1, c.hidden);
    add_row_bias(c.hidden, w.b1.flat());
    c.hidden_relu = c.hidden;
    for (auto& h : c.hidden_relu.values()) h = std::max(h, 0.0F);
    matmul(c.hidden_relu, w.w2, mlp_out);
    add_row_bias(mlp_out, w.b2.flat());
    add_into(x, resid, mlp_out);
  }
  fc.x_final = x;
  layer_norm(x, t.lnf_gain, t.lnf_bias, fc.n_final, &fc.xhat_final, &fc.rstd_final);
}

void Model::backward(const PackedBatch& batch, const ForwardCache& fc, const Matrix& d_final,
                     std::span<float> grads) const {
  const auto t = bind_tensors(config_, std::span<const float>(params_));
  auto g = bind_tensors(config_, grads);
  const std::size_t d = static_cast<std::size_t>(config_.d_model);
  const std::size_t heads = static_cast<std::size_t>(config_.n_heads);
  const std::size_t dh = d / heads;
  const float scale = 1.0F / std::sqrt(static_cast<float>(dh));

  Matrix dx;  // gradient w.r.t. the residual stream
  layer_norm_backward(d_final, fc.xhat_final, fc.rstd_final, t.lnf_gain, g.lnf_gain, g.lnf_bias,
                      dx, false);

  Matrix d_hidden, d_n2, d_resid, d_concat, dq, dk, dv, d_n1, tmp;
  for (std::size_t li = t.layers.size(); li-- > 0;) {
    const auto& w = t.layers[li];
    auto& gw = g.layers[li];
    const auto& c = fc.layers[li];

    // mlp_resid = resid + mlp_out
    const Matrix& d_mlp_out = dx;
    accumulate_column_sums(d_mlp_out, gw.b2.flat());
    matmul_tn_acc(c.hidden_relu, d_mlp_out, gw.w2);
    matmul_nt(d_mlp_out, w.w2, d_hidden);
    for (std::size_t i = 0; i < d_hidden.size(); ++i)
      if (c.hidden.data()[i] <= 0.0F) d_hidden.data()[i] = 0.0F;
    accumulate_column_sums(d_hidden, gw.b1.flat());
    matmul_tn_acc(c.n2, d_hidden, gw.w1);
    matmul_nt(d_hidden, w.w1, d_n2);
    d_resid = dx;
    layer_norm_backward(d_n2, c.xhat2, c.rstd2, w.ln2_gain, gw.ln2_gain, gw.ln2_bias, d_resid,
                        true);

    // resid = x_in + attn_out
    const Matrix& d_attn_out = d_resid;
    matmul_tn_acc(c.attn_concat, d_attn_out, gw.wo);
    matmul_nt(d_attn_out, w.wo, d_concat);

    dq.resize(c.q.rows(), d);
    dk.resize(c.k.rows(), d);
    dv.resize(c.v.rows(), d);
    std::size_t probs_offset = 0;
    std::vector<float> dp;
    for (std::size_t s = 0; s < batch.segments(); ++s) {
      const std::size_t begin = batch.offsets[s];
      const std::size_t len = batch.offsets[s + 1] - begin;
      dp.resize(len);
      for (std::size_t h = 0; h < heads; ++h) {
        const float* probs = c.probs.data() + probs_offset + h * len * len;
        for (std::size_t i = 0; i < len; ++i) {
          const float* p_row = probs + i * len;
          const float* dout = d_concat.data() + (begin + i) * d + h * dh;
          float dot = 0.0F;
          for (std::size_t j = 0; j <= i; ++j) {
            const float* vj = c.v.data() + (begin + j) * d + h * dh;
            float s_ = 0.0F;
            for (std::size_t cc = 0; cc < dh; ++cc) s_ += dout[cc] * vj[cc];
            dp[j] = s_;
            dot += p_row[j] * s_;
            float* dvj = dv.data() + (begin + j) * d + h * dh;
            for (std::size_t cc = 0; cc < dh; ++cc) dvj[cc] += p_row[j] * dout[cc];
          }
          const float* qi = c.q.data() + (begin + i) * d + h * dh;
          float* dqi = dq.data() + (begin + i) * d + h * dh;
          for (std::size_t j = 0; j <= i; ++j) {
            const float ds = p_row[j] * (dp[j] - dot) * scale;
            const float* kj = c.k.data() + (begin + j) * d + h * dh;
            float* dkj = dk.data() + (begin + j) * d + h * dh;
            for (std::size_t cc = 0; cc < dh; ++cc) {
              dqi[cc] += ds * kj[cc];
              dkj[cc] += ds * qi[cc];
            }
          }
        }
      }
      probs_offset += heads * len * len;
    }
    matmul_tn_acc(c.n1, dq, gw.wq);
    matmul_tn_acc(c.n1, dk, gw.wk);
    matmul_tn_acc(c.n1, dv, gw.wv);
    matmul_nt(dq, w.wq, d_n1);
    matmul_nt(dk, w.wk, tmp);
    for (std::size_t i = 0; i < d_n1.size(); ++i) d_n1.data()[i] += tmp.data()[i];
    matmul_nt(dv, w.wv, tmp);
    for (std::size_t i = 0; i < d_n1.size(); ++i) d_n1.data()[i] += tmp.data()[i];
    dx = d_resid;
    layer_norm_backward(d_n1, c.xhat1, c.rstd1, w.ln1_gain, gw.ln1_gain, gw.ln1_bias, dx, true);
  }

  for (std::size_t s = 0; s < batch.segments(); ++s) {
    const std::size_t begin = batch.offsets[s];
    const std::size_t len = batch.offsets[s + 1] - begin;
    for (std::size_t r = 0; r < len; ++r) {
      const auto tok = static_cast<std::size_t>(batch.tokens[begin + r]);
      const auto src = dx.row(begin + r);
      auto te = g.tok_emb.row(tok);
      auto pe = g.pos_emb.row(r);
      for (std::size_t j = 0; j < d; ++j) {
        te[j] += src[j];
        pe[j] += src[j];
      }
    }
  }
}

namespace {

std::string config_text(const ModelConfig& c) {
  std::ostringstream os;
  os << "n_layers " << c.n_layers << "\n"
     << "d_model " << c.d_model << "\n"
     << "n_heads " << c.n_heads << "\n"
     << "d_ffn " << c.d_ffn << "\n"
     << "max_context " << c.max_context << "\n"
     << "vocab_size " << c.vocab_size << "\n"
     << "seed " << c.seed << "\n";
  return os.str();
}

std::span<const std::uint8_t> as_bytes_u8(std::span<const float> v) {
  return {reinterpret_cast<const std::uint8_t*>(v.data()), v.size() * sizeof(float)};
}

std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* suffix) {
  auto p = stem;
  p += suffix;
  return p;
}

}  // namespace

std::string Model::checksum() const {
  std::string text = config_text(config_);
  text += to_hex(sha256(as_bytes_u8(params_)));
  return sha256_hex(text);
}

void save_checkpoint(const Model& model, const std::filesystem::path& stem) {
  const auto bytes = as_bytes_u8(model.parameters());
  {
    auto bin = open_output(with_suffix(stem, ".bin"));
    bin.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
  }
  auto man = open_output(with_suffix(stem, ".manifest"));
  man << "lenrep-checkpoint 1\n" << config_text(model.config());
  man << "archive_sha256 " << to_hex(sha256(bytes)) << "\n";
  for (const auto& t : parameter_layout(model.config()))
    man << "tensor " << t.name << " " << t.rows << "x" << t.cols << " "
        << t.offset * sizeof(float) << "\n";
}

Model load_checkpoint(const std::filesystem::path& stem) {
  std::ifstream man(with_suffix(stem, ".manifest"), std::ios::binary);
  if (!man) fail(ErrorKind::Data, "missing checkpoint manifest " + stem.string() + ".manifest");
  std::string magic;
  int version = 0;
  man >> magic >> version;
  if (magic != "lenrep-checkpoint" || version != 1)
    fail(ErrorKind::Corruption, "not a lenrep checkpoint manifest");
  ModelConfig cfg;
  std::string archive_sha;
  std::vector<TensorInfo> listed;
  for (std::string key; man >> key;) {
    if (key == "n_layers") man >> cfg.n_layers;
    else if (key == "d_model") man >> cfg.d_model;
    else if (key == "n_heads") man >> cfg.n_heads;
    else if (key == "d_ffn") man >> cfg.d_ffn;
    else if (key == "max_context") man >> cfg.max_context;
    else if (key == "vocab_size") man >> cfg.vocab_size;
    else if (key == "seed") man >> cfg.seed;
    else if (key == "archive_sha256") man >> archive_sha;
    else if (key == "tensor") {
      TensorInfo info;
      std::string shape;
      std::size_t byte_offset = 0;
      man >> info.name >> shape >> byte_offset;
      const auto x = shape.find('x');
      if (x == std::string::npos) fail(ErrorKind::Corruption, "malformed tensor shape");
      info.rows = std::stoull(shape.substr(0, x));
      info.cols = std::stoull(shape.substr(x + 1));
      info.offset = byte_offset / sizeof(float);
      listed.push_back(std::move(info));
    } else {
      fail(ErrorKind::Corruption, "unknown manifest key '" + key + "'");
    }
    if (!man) fail(ErrorKind::Corruption, "truncated checkpoint manifest");
  }
  cfg.validate();
  const auto expected = parameter_layout(cfg);
  if (listed.size() != expected.size())
    fail(ErrorKind::Corruption, "checkpoint tensor list does not match config");
  for (std::size_t i = 0; i < listed.size(); ++i) {
    const auto& a = listed[i];
    const auto& b = expected[i];
    if (a.name != b.name || a.rows != b.rows || a.cols != b.cols || a.offset != b.offset)
      fail(ErrorKind::Corruption, "checkpoint tensor '" + a.name + "' does not match config");
  }

  std::ifstream bin(with_suffix(stem, ".bin"), std::ios::binary);
  if (!bin) fail(ErrorKind::Data, "missing checkpoint archive " + stem.string() + ".bin");
  std::vector<float> params(cfg.parameter_count());
  bin.read(reinterpret_cast<char*>(params.data()),
           static_cast<std::streamsize>(params.size() * sizeof(float)));
  if (bin.gcount() != static_cast<std::streamsize>(params.size() * sizeof(float)) ||
      bin.peek() != std::char_traits<char>::eof())
    fail(ErrorKind::Corruption, "checkpoint archive size does not match manifest");
  if (to_hex(sha256(as_bytes_u8(params))) != archive_sha)
    fail(ErrorKind::Corruption, "checkpoint archive checksum mismatch");
  return Model(cfg, std::move(params));
}

std::string checkpoint_hash(const std::filesystem::path& stem) {
  return file_sha256(with_suffix(stem, ".manifest"));
}

}  // namespace lenrep
