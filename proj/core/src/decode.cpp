// Copyright 2026 The lenrep Authors
// SPDX-License-Identifier: Apache-2.0

#include "lenrep/decode.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <regex>

#include "lenrep/error.hpp"
#include "lenrep/train.hpp"

namespace lenrep {

void DecodeConfig::validate() const {
  if (max_new_tokens < 1) fail(ErrorKind::Config, "max_new_tokens must be at least 1");
  if (const auto* b = std::get_if<Beam>(&strategy); b && b->width < 1)
    fail(ErrorKind::Config, "beam width must be at least 1");
  if (const auto* k = std::get_if<TopK>(&strategy); k && (k->k < 1 || !(k->temperature > 0.0F)))
    fail(ErrorKind::Config, "top-k needs k >= 1 and a positive temperature");
}

std::string DecodeConfig::describe() const {
  std::string s;
  if (std::holds_alternative<Greedy>(strategy)) {
    s = "greedy";
  } else if (const auto* b = std::get_if<Beam>(&strategy)) {
    s = "beam" + std::to_string(b->width);
  } else {
    const auto& k = std::get<TopK>(strategy);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", static_cast<double>(k.temperature));
    s = "topk" + std::to_string(k.k) + ":t" + buf + ":s" + std::to_string(k.seed);
  }
  return s + "/" + std::to_string(max_new_tokens);
}

DecodeConfig DecodeConfig::parse(const std::string& text) {
  static const std::regex re(R"(^(greedy|beam(\d+)|topk(\d+):t([0-9.eE+-]+):s(\d+))/(\d+)$)");
  std::smatch m;
  if (!std::regex_match(text, m, re))
    fail(ErrorKind::Config, "cannot parse decode config '" + text + "'");
  DecodeConfig c;
  c.max_new_tokens = std::stoi(m[6]);
  if (m[2].matched) {
    c.strategy = Beam{std::stoi(m[2])};
  } else if (m[3].matched) {
    c.strategy = TopK{std::stoi(m[3]), std::stof(m[4]), std::stoull(m[5])};
  }
  c.validate();
  return c;
}

namespace {

// Applies the intervention to generated positions and records requested taps
// at the position that emits the next token.
class StepHook final : public TapHook {
 public:
  StepHook(const Hooks& hooks, const CaptureRequest* capture, std::size_t prompt_len,
           std::size_t d_model)
      : intervention_(hooks.intervention), capture_(capture), prompt_len_(prompt_len) {
    if (capture_) {
      slot_of_.assign(64 * 4, -1);
      for (std::size_t li = 0; li < capture_->layers.size(); ++li)
        for (std::size_t ti = 0; ti < capture_->taps.size(); ++ti)
          slot_of_.at(static_cast<std::size_t>(capture_->layers[li] - 1) * 4 +
                      static_cast<std::size_t>(capture_->taps[ti])) =
              static_cast<int>(capture_->slot(li, ti));
      current_.resize(capture_->pairs(), d_model);
    }
  }

  void set_emit_position(std::size_t pos) noexcept { emit_position_ = pos; }
  const Matrix& current() const noexcept { return current_; }

  void on_tap(const TapSite& site, std::span<float> values) override {
    if (intervention_ && site.position >= prompt_len_) intervention_->on_tap(site, values);
    if (capture_ && site.position == emit_position_) {
      const auto key = static_cast<std::size_t>(site.layer - 1) * 4 +
                       static_cast<std::size_t>(site.tap);
      if (key < slot_of_.size() && slot_of_[key] >= 0)
        std::copy(values.begin(), values.end(),
                  current_.row(static_cast<std::size_t>(slot_of_[key])).begin());
    }
  }

 private:
  TapHook* intervention_;
  const CaptureRequest* capture_;
  std::size_t prompt_len_;
  std::size_t emit_position_ = 0;
  std::vector<int> slot_of_;
  Matrix current_;
};

void check_capture(const Model& model, const CaptureRequest* capture) {
  if (!capture) return;
  for (int l : capture->layers)
    if (l < 1 || l > model.config().n_layers || l > 64)
      fail(ErrorKind::Config, "capture layer " + std::to_string(l) + " out of range");
}

struct Hypothesis {
  KvCache cache;
  TokenSequence generated;
  std::vector<Matrix> captures;
  std::vector<float> logits;  // next-token logits
  double score = 0.0;
};

std::vector<double> log_softmax(std::span<const float> logits) {
  const float mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (float v : logits) sum += std::exp(static_cast<double>(v) - mx);
  const double lse = static_cast<double>(mx) + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = static_cast<double>(logits[i]) - lse;
  return out;
}

GenerationOutput beam_search(const Model& model, const TokenSequence& prompt,
                             std::size_t budget, const Hooks& hooks, int width) {
  const std::size_t d = static_cast<std::size_t>(model.config().d_model);
  StepHook hook(hooks, hooks.capture, prompt.size(), d);

  Hypothesis root{KvCache(model.config()), {}, {}, {}, 0.0};
  hook.set_emit_position(prompt.size() - 1);
  root.logits = model.step(root.cache, prompt, &hook);
  if (hooks.capture) root.captures.push_back(hook.current());

  std::vector<Hypothesis> alive;
  alive.push_back(std::move(root));
  std::vector<Hypothesis> finished;

  struct Candidate {
    double score;
    std::size_t beam;
    TokenId token;
  };
  for (std::size_t step = 0; step < budget && !alive.empty(); ++step) {
    std::vector<Candidate> cands;
    for (std::size_t b = 0; b < alive.size(); ++b) {
      const auto lp = log_softmax(alive[b].logits);
      for (std::size_t tok = 0; tok < lp.size(); ++tok)
        cands.push_back({alive[b].score + lp[tok], b, static_cast<TokenId>(tok)});
    }
    const std::size_t keep = std::min(cands.size(), static_cast<std::size_t>(width));
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep),
                      cands.end(), [](const Candidate& a, const Candidate& b) {
                        if (a.score != b.score) return a.score > b.score;
                        if (a.beam != b.beam) return a.beam < b.beam;
                        return a.token < b.token;
                      });

    std::vector<Hypothesis> next;
    for (std::size_t c = 0; c < keep; ++c) {
      const auto& cand = cands[c];
      const Hypothesis& parent = alive[cand.beam];
      Hypothesis h{parent.cache, parent.generated, parent.captures, {}, cand.score};
      h.generated.push_back(cand.token);
      const bool last_step = step + 1 == budget;
      if (cand.token == Vocab::eos() || last_step) {
        finished.push_back(std::move(h));
        continue;
      }
      hook.set_emit_position(prompt.size() + h.generated.size() - 1);
      h.logits = model.step(h.cache, {&cand.token, 1}, &hook);
      if (hooks.capture) h.captures.push_back(hook.current());
      next.push_back(std::move(h));
    }
    alive = std::move(next);

    // Scores only decrease, so no live hypothesis can overtake a better finished one.
    if (!finished.empty() && !alive.empty()) {
      double best_finished = -INFINITY;
      for (const auto& f : finished) best_finished = std::max(best_finished, f.score);
      double best_alive = -INFINITY;
      for (const auto& a : alive) best_alive = std::max(best_alive, a.score);
      if (best_finished >= best_alive) break;
    }
  }

  const Hypothesis* best = nullptr;
  for (const auto& f : finished)
    if (!best || f.score > best->score) best = &f;
  for (const auto& a : alive)
    if (!best || a.score > best->score) best = &a;

  GenerationOutput out;
  out.prompt = prompt;
  out.generated = best->generated;
  out.captures = best->captures;
  return out;
}

}  // namespace

GenerationOutput generate(const Model& model, const TokenSequence& prompt,
                          const DecodeConfig& config, const Hooks& hooks) {
  config.validate();
  check_capture(model, hooks.capture);
  if (prompt.empty()) fail(ErrorKind::Config, "prompt must not be empty");
  if (prompt.size() > static_cast<std::size_t>(model.config().max_context))
    fail(ErrorKind::Length, "prompt of " + std::to_string(prompt.size()) +
                                " tokens exceeds max_context");

  // The last generated token is never fed back, so it may sit one past the context.
  const std::size_t budget = std::min<std::size_t>(
      static_cast<std::size_t>(config.max_new_tokens),
      static_cast<std::size_t>(model.config().max_context) - prompt.size() + 1);
  if (const auto* beam = std::get_if<Beam>(&config.strategy))
    return beam_search(model, prompt, budget, hooks, beam->width);

  const std::size_t d = static_cast<std::size_t>(model.config().d_model);
  StepHook hook(hooks, hooks.capture, prompt.size(), d);
  KvCache cache(model.config());
  GenerationOutput out;
  out.prompt = prompt;

  const auto* topk = std::get_if<TopK>(&config.strategy);
  std::mt19937_64 rng(topk ? topk->seed : 0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  hook.set_emit_position(prompt.size() - 1);
  auto logits = model.step(cache, prompt, &hook);
  while (true) {
    if (hooks.capture) out.captures.push_back(hook.current());
    TokenId next = 0;
    if (!topk) {
      next = static_cast<TokenId>(argmax(logits));
    } else {
      std::vector<std::size_t> ids(logits.size());
      std::iota(ids.begin(), ids.end(), std::size_t{0});
      const std::size_t k = std::min(ids.size(), static_cast<std::size_t>(topk->k));
      std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(),
                        [&](std::size_t a, std::size_t b) {
                          if (logits[a] != logits[b]) return logits[a] > logits[b];
                          return a < b;
                        });
      std::vector<double> weights(k);
      const double top = static_cast<double>(logits[ids[0]]) / topk->temperature;
      double total = 0.0;
      for (std::size_t i = 0; i < k; ++i) {
        weights[i] = std::exp(static_cast<double>(logits[ids[i]]) / topk->temperature - top);
        total += weights[i];
      }
      double u = uniform(rng) * total;
      std::size_t pick = k - 1;
      for (std::size_t i = 0; i < k; ++i) {
        if (u < weights[i]) {
          pick = i;
          break;
        }
        u -= weights[i];
      }
      next = static_cast<TokenId>(ids[pick]);
    }
    out.generated.push_back(next);
    if (next == Vocab::eos() || out.generated.size() >= budget) break;
    hook.set_emit_position(cache.length());
    logits = model.step(cache, {&next, 1}, &hook);
  }
  return out;
}

}  // namespace lenrep
