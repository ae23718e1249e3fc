// Copyright 2026 The lenrep Authors
// SPDX-License-Identifier: Apache-2.0

#include "lenrep/probe.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <thread>

#include <nlohmann/json.hpp>

#include "lenrep/error.hpp"
#include "lenrep/io.hpp"
#include "lenrep/metrics.hpp"

namespace lenrep {

namespace {

constexpr double kDegenerateVariance = 1e-12;

using MatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using VecF = Eigen::VectorXf;

struct Standardizer {
  std::vector<double> mean, std;
};

// Per-feature mean and population std over the train rows; a constant feature
// keeps std 1 so it maps to zero.
Standardizer fit_standardizer(const ProbeSlice& s, const FeatureSelector& sel) {
  const std::size_t dim = std::holds_alternative<AllFeatures>(sel) ? s.features.cols : 1;
  const std::size_t col0 =
      std::holds_alternative<SingleUnit>(sel) ? std::get<SingleUnit>(sel).index : 0;
  Standardizer st{std::vector<double>(dim, 0.0), std::vector<double>(dim, 0.0)};
  for (std::size_t r : s.train_rows) {
    const auto row = s.features.row(r);
    for (std::size_t j = 0; j < dim; ++j) st.mean[j] += row[col0 + j];
  }
  const auto n = static_cast<double>(s.train_rows.size());
  for (auto& m : st.mean) m /= n;
  for (std::size_t r : s.train_rows) {
    const auto row = s.features.row(r);
    for (std::size_t j = 0; j < dim; ++j) {
      const double d = row[col0 + j] - st.mean[j];
      st.std[j] += d * d;
    }
  }
  for (auto& v : st.std) {
    v = std::sqrt(v / n);
    if (!(v > 1e-12)) v = 1.0;
  }
  return st;
}

MatF gather(const ProbeSlice& s, const std::vector<std::size_t>& rows, const FeatureSelector& sel,
            const Standardizer& st) {
  const std::size_t dim = st.mean.size();
  const std::size_t col0 =
      std::holds_alternative<SingleUnit>(sel) ? std::get<SingleUnit>(sel).index : 0;
  MatF x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto row = s.features.row(rows[i]);
    for (std::size_t j = 0; j < dim; ++j)
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          static_cast<float>((row[col0 + j] - st.mean[j]) / st.std[j]);
  }
  return x;
}

void check_slice(const ProbeSlice& s, const FeatureSelector& sel) {
  if (s.train_rows.empty() || s.val_rows.empty())
    fail(ErrorKind::Data, "probe needs nonempty train and val splits");
  if (s.targets.size() != s.features.rows)
    fail(ErrorKind::Config, "probe targets and features disagree in length");
  if (const auto* u = std::get_if<SingleUnit>(&sel); u && u->index >= s.features.cols)
    fail(ErrorKind::Config, "unit " + std::to_string(u->index) + " exceeds input dimension " +
                                std::to_string(s.features.cols));
}

struct Adam {
  explicit Adam(std::size_t n) : m(n, 0.0F), v(n, 0.0F) {}
  void update(std::span<float> p, std::span<const float> g, std::size_t offset, double lr) {
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t));
    for (std::size_t i = 0; i < p.size(); ++i) {
      float& mi = m[offset + i];
      float& vi = v[offset + i];
      mi = static_cast<float>(kBeta1 * mi + (1.0 - kBeta1) * g[i]);
      vi = static_cast<float>(kBeta2 * vi + (1.0 - kBeta2) * g[i] * g[i]);
      p[i] -= static_cast<float>(lr * (mi / c1) / (std::sqrt(vi / c2) + 1e-8));
    }
  }
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  std::vector<float> m, v;
  long t = 0;
};

template <typename M>
std::span<float> as_span(M& m) {
  return {m.data(), static_cast<std::size_t>(m.size())};
}

}  // namespace

double r_squared(std::span<const double> y, std::span<const double> yhat) {
  if (y.size() != yhat.size()) fail(ErrorKind::Config, "r_squared: length mismatch");
  if (y.size() < 2) fail(ErrorKind::Config, "r_squared needs at least two values");
  const double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    ss_res += (y[i] - yhat[i]) * (y[i] - yhat[i]);
    ss_tot += (y[i] - mean) * (y[i] - mean);
  }
  if (ss_tot / static_cast<double>(y.size()) < kDegenerateVariance)
    fail(ErrorKind::Degenerate, "r_squared: targets are constant");
  return 1.0 - ss_res / ss_tot;
}

void ProbeConfig::validate() const {
  if (hidden_width < 1 || lr <= 0.0 || max_epochs < 1 || batch < 1 || patience < 1)
    fail(ErrorKind::Config, "probe hyperparameters must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail(ErrorKind::Config, "dropout must be in [0, 1)");
}

ProbeConfig ProbeConfig::full_vector() { return {}; }

ProbeConfig ProbeConfig::per_unit() {
  ProbeConfig c;
  c.batch = 64;
  c.patience = 5;
  return c;
}

double Probe::predict(std::span<const float> x) const {
  if (x.size() != input_dim) fail(ErrorKind::Config, "probe input dimension mismatch");
  double out = b2;
  for (std::size_t h = 0; h < hidden; ++h) {
    float a = b1[h];
    for (std::size_t j = 0; j < input_dim; ++j)
      a += w1[h * input_dim + j] *
           static_cast<float>((x[j] - feature_mean[j]) / feature_std[j]);
    out += static_cast<double>(w2[h]) * std::max(a, 0.0F);
  }
  return out * target_std + target_mean;
}

ProbeSlice make_slice(const ActivationDataset& dataset, int layer, TapPoint tap) {
  return {dataset.group(layer, tap), dataset.timesteps(), dataset.train_rows(),
          dataset.val_rows()};
}

ProbeFit train_probe(const ProbeSlice& slice, const ProbeConfig& config,
                     const FeatureSelector& selector) {
  config.validate();
  check_slice(slice, selector);

  std::vector<double> y_train, y_val;
  for (std::size_t r : slice.train_rows) y_train.push_back(slice.targets[r]);
  for (std::size_t r : slice.val_rows) y_val.push_back(slice.targets[r]);
  const auto n_train = static_cast<double>(y_train.size());
  const double t_mean = std::accumulate(y_train.begin(), y_train.end(), 0.0) / n_train;
  double t_var = 0.0;
  for (double v : y_train) t_var += (v - t_mean) * (v - t_mean);
  t_var /= n_train;
  if (t_var < kDegenerateVariance) fail(ErrorKind::Degenerate, "probe targets are constant");
  const double t_std = std::sqrt(t_var);

  const Standardizer st = fit_standardizer(slice, selector);
  const MatF x_train = gather(slice, slice.train_rows, selector, st);
  const MatF x_val = gather(slice, slice.val_rows, selector, st);
  VecF yt(x_train.rows()), yv(x_val.rows());
  for (Eigen::Index i = 0; i < yt.size(); ++i)
    yt(i) = static_cast<float>((y_train[static_cast<std::size_t>(i)] - t_mean) / t_std);
  for (Eigen::Index i = 0; i < yv.size(); ++i)
    yv(i) = static_cast<float>((y_val[static_cast<std::size_t>(i)] - t_mean) / t_std);

  const auto in = static_cast<Eigen::Index>(st.mean.size());
  const auto hid = static_cast<Eigen::Index>(config.hidden_width);
  std::mt19937_64 rng(config.seed);
  auto uniform_fill = [&rng](auto& m, double bound) {
    std::uniform_real_distribution<double> u(-bound, bound);
    for (auto& v : as_span(m)) v = static_cast<float>(u(rng));
  };
  MatF w1(hid, in);
  VecF b1(hid), w2(hid), b2(1);
  uniform_fill(w1, 1.0 / std::sqrt(static_cast<double>(in)));
  uniform_fill(b1, 1.0 / std::sqrt(static_cast<double>(in)));
  uniform_fill(w2, 1.0 / std::sqrt(static_cast<double>(hid)));
  uniform_fill(b2, 1.0 / std::sqrt(static_cast<double>(hid)));

  auto val_mse = [&](const MatF& w1_, const VecF& b1_, const VecF& w2_, float b2_) {
    MatF h = (x_val * w1_.transpose()).rowwise() + b1_.transpose();
    const VecF pred = (h.array().max(0.0F).matrix() * w2_).array() + b2_;
    return static_cast<double>((pred - yv).squaredNorm()) / static_cast<double>(yv.size());
  };

  Adam adam(static_cast<std::size_t>(w1.size() + b1.size() + w2.size() + 1));
  MatF best_w1 = w1;
  VecF best_b1 = b1, best_w2 = w2;
  float best_b2 = b2(0);
  double best = val_mse(w1, b1, w2, b2(0));
  int since_best = 0;
  int epochs = 0;

  std::vector<Eigen::Index> perm(static_cast<std::size_t>(x_train.rows()));
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  std::bernoulli_distribution keep(1.0 - config.dropout);
  const float keep_scale = static_cast<float>(1.0 / (1.0 - config.dropout));
  const auto batch = static_cast<Eigen::Index>(config.batch);
  MatF xb, h, mask;
  VecF yb;
  MatF g_w1;
  VecF g_b1, g_w2;
  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    ++epochs;
    std::shuffle(perm.begin(), perm.end(), rng);
    for (Eigen::Index start = 0; start < x_train.rows(); start += batch) {
      const Eigen::Index bs = std::min(batch, x_train.rows() - start);
      xb.resize(bs, in);
      yb.resize(bs);
      for (Eigen::Index i = 0; i < bs; ++i) {
        const auto src = perm[static_cast<std::size_t>(start + i)];
        xb.row(i) = x_train.row(src);
        yb(i) = yt(src);
      }
      h.noalias() = xb * w1.transpose();
      h.rowwise() += b1.transpose();
      mask.resize(bs, hid);
      for (auto& m : as_span(mask)) m = keep(rng) ? keep_scale : 0.0F;
      // mask doubles as the ReLU derivative times the dropout factor
      mask.array() *= (h.array() > 0.0F).cast<float>();
      const MatF a = h.cwiseProduct(mask);
      const VecF pred = (a * w2).array() + b2(0);
      const VecF dpred = (pred - yb) * (2.0F / static_cast<float>(bs));

      g_w2.noalias() = a.transpose() * dpred;
      const float g_b2 = dpred.sum();
      const MatF dh = (dpred * w2.transpose()).cwiseProduct(mask);
      g_w1.noalias() = dh.transpose() * xb;
      g_b1 = dh.colwise().sum().transpose();

      ++adam.t;
      std::size_t off = 0;
      adam.update(as_span(w1), as_span(g_w1), off, config.lr);
      off += static_cast<std::size_t>(w1.size());
      adam.update(as_span(b1), as_span(g_b1), off, config.lr);
      off += static_cast<std::size_t>(b1.size());
      adam.update(as_span(w2), as_span(g_w2), off, config.lr);
      off += static_cast<std::size_t>(w2.size());
      adam.update(as_span(b2), {&g_b2, 1}, off, config.lr);
    }
    const double mse = val_mse(w1, b1, w2, b2(0));
    if (mse < best) {
      best = mse;
      best_w1 = w1;
      best_b1 = b1;
      best_w2 = w2;
      best_b2 = b2(0);
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }

  ProbeFit fit;
  fit.epochs = epochs;
  Probe& p = fit.probe;
  p.input_dim = static_cast<std::size_t>(in);
  p.hidden = static_cast<std::size_t>(hid);
  p.w1.assign(best_w1.data(), best_w1.data() + best_w1.size());
  p.b1.assign(best_b1.data(), best_b1.data() + best_b1.size());
  p.w2.assign(best_w2.data(), best_w2.data() + best_w2.size());
  p.b2 = best_b2;
  p.feature_mean = st.mean;
  p.feature_std = st.std;
  p.target_mean = t_mean;
  p.target_std = t_std;

  MatF hv = (x_val * best_w1.transpose()).rowwise() + best_b1.transpose();
  const VecF pv = (hv.array().max(0.0F).matrix() * best_w2).array() + best_b2;
  std::vector<double> yhat(y_val.size());
  for (std::size_t i = 0; i < yhat.size(); ++i)
    yhat[i] = static_cast<double>(pv(static_cast<Eigen::Index>(i))) * t_std + t_mean;
  fit.val_r2 = r_squared(y_val, yhat);
  return fit;
}

namespace {

// Runs jobs 0..n-1 over a pool; job i writes only its own result slot.
template <typename Fn>
void run_jobs(std::size_t n, unsigned threads, Fn&& job) {
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) job(i);
  };
  if (threads <= 1 || n <= 1) {
    worker();
    return;
  }
  std::vector<std::jthread> pool;
  for (unsigned t = 0; t < std::min<std::size_t>(threads, n); ++t) pool.emplace_back(worker);
}

}  // namespace

const ProbeCell& ProbeReport::cell(int layer, TapPoint tap) const {
  for (const auto& c : cells)
    if (c.layer == layer && c.tap == tap) return c;
  fail(ErrorKind::Config, "probe report has no cell for layer " + std::to_string(layer) + " " +
                              std::string(to_string(tap)));
}

ProbeReport probe_grid(const ActivationDataset& dataset, const std::vector<int>& layers,
                       const std::vector<TapPoint>& taps, const ProbeConfig& config, int n_runs,
                       unsigned threads) {
  config.validate();
  if (n_runs < 1) fail(ErrorKind::Config, "n_runs must be at least 1");
  ProbeReport report;
  report.n_runs = n_runs;
  std::vector<ProbeSlice> slices;
  for (int l : layers) {
    for (TapPoint t : taps) {
      ProbeCell cell;
      cell.layer = l;
      cell.tap = t;
      if (!dataset.has(l, t)) {
        cell.present = false;
        cell.reason = "not collected";
      }
      report.cells.push_back(cell);
      slices.push_back(cell.present ? make_slice(dataset, l, t) : ProbeSlice{});
    }
  }

  const auto runs = static_cast<std::size_t>(n_runs);
  std::vector<double> r2(report.cells.size() * runs, 0.0);
  std::vector<std::string> errors(r2.size());
  run_jobs(r2.size(), threads, [&](std::size_t job) {
    const std::size_t c = job / runs;
    if (!report.cells[c].present) return;
    ProbeConfig cfg = config;
    cfg.seed = config.seed + job % runs;
    try {
      r2[job] = train_probe(slices[c], cfg).val_r2;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Degenerate && e.kind() != ErrorKind::Data) throw;
      errors[job] = e.what();
    }
  });

  for (std::size_t c = 0; c < report.cells.size(); ++c) {
    auto& cell = report.cells[c];
    if (!cell.present) continue;
    for (std::size_t r = 0; r < runs; ++r) {
      if (!errors[c * runs + r].empty()) {
        cell.present = false;
        cell.reason = errors[c * runs + r];
        break;
      }
    }
    if (!cell.present) continue;
    cell.r2.assign(r2.begin() + static_cast<long>(c * runs),
                   r2.begin() + static_cast<long>((c + 1) * runs));
    const auto ms = mean_stderr(cell.r2);
    cell.r2_mean = ms.mean;
    cell.r2_stderr = ms.stderr_;
  }
  return report;
}

UnitScores probe_per_unit(const ProbeSlice& slice, const ProbeConfig& config, unsigned threads) {
  UnitScores scores;
  scores.r2.assign(slice.features.cols, 0.0);
  run_jobs(scores.r2.size(), threads, [&](std::size_t unit) {
    scores.r2[unit] = train_probe(slice, config, SingleUnit{unit}).val_r2;
  });
  return scores;
}

UnitRanking::UnitRanking(std::vector<double> scores) : scores_(std::move(scores)) {
  order_.resize(scores_.size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  std::stable_sort(order_.begin(), order_.end(),
                   [this](std::size_t a, std::size_t b) { return scores_[a] > scores_[b]; });
}

std::vector<std::size_t> UnitRanking::top_k(std::size_t k) const {
  if (k > order_.size()) fail(ErrorKind::Config, "top_k exceeds the number of units");
  return {order_.begin(), order_.begin() + static_cast<long>(k)};
}

std::vector<std::size_t> UnitRanking::smallest_k(std::size_t k) const {
  if (k > order_.size()) fail(ErrorKind::Config, "smallest_k exceeds the number of units");
  std::vector<std::size_t> asc(order_.size());
  std::iota(asc.begin(), asc.end(), std::size_t{0});
  std::stable_sort(asc.begin(), asc.end(),
                   [this](std::size_t a, std::size_t b) { return scores_[a] < scores_[b]; });
  asc.resize(k);
  return asc;
}

double UnitRanking::avg_top_m(std::size_t m) const {
  if (m == 0 || m > order_.size()) fail(ErrorKind::Config, "avg_top_m needs 1 <= m <= units");
  double sum = 0.0;
  for (std::size_t i = 0; i < m; ++i) sum += scores_[order_[i]];
  return sum / static_cast<double>(m);
}

UnitRanking rank_units(const UnitScores& scores, std::size_t k, std::size_t m) {
  if (k > scores.r2.size() || m > scores.r2.size())
    fail(ErrorKind::Config, "k and m must not exceed the number of units");
  return UnitRanking(scores.r2);
}

LinearFit fit_linear_probe(const ProbeSlice& slice) {
  check_slice(slice, AllFeatures{});
  const Standardizer st = fit_standardizer(slice, AllFeatures{});
  const std::size_t dim = st.mean.size();
  auto design = [&](const std::vector<std::size_t>& rows) {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(dim));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto row = slice.features.row(rows[i]);
      for (std::size_t j = 0; j < dim; ++j)
        x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
            (row[j] - st.mean[j]) / st.std[j];
    }
    return x;
  };
  const Eigen::MatrixXd xt = design(slice.train_rows);
  Eigen::VectorXd yt(xt.rows());
  for (Eigen::Index i = 0; i < yt.size(); ++i)
    yt(i) = slice.targets[slice.train_rows[static_cast<std::size_t>(i)]];
  const double y_mean = yt.mean();
  const Eigen::VectorXd yc = yt.array() - y_mean;

  Eigen::MatrixXd gram = xt.transpose() * xt;
  gram.diagonal().array() += 1e-6;
  const Eigen::VectorXd w = gram.ldlt().solve(xt.transpose() * yc);

  LinearFit fit;
  fit.weights.assign(w.data(), w.data() + w.size());
  fit.intercept = y_mean;
  const Eigen::VectorXd pv = (design(slice.val_rows) * w).array() + y_mean;
  std::vector<double> y_val, yhat(pv.data(), pv.data() + pv.size());
  for (std::size_t r : slice.val_rows) y_val.push_back(slice.targets[r]);
  fit.val_r2 = r_squared(y_val, yhat);
  return fit;
}

void write_probe_report(const ProbeReport& report, const std::filesystem::path& json_path,
                        const std::filesystem::path& csv_path) {
  nlohmann::json j;
  j["n_runs"] = report.n_runs;
  auto& cells = j["cells"] = nlohmann::json::array();
  std::string csv = "layer,tap,run,r2\n";
  for (const auto& c : report.cells) {
    nlohmann::json cj = {{"layer", c.layer}, {"tap", to_string(c.tap)}, {"present", c.present}};
    if (c.present) {
      cj["r2"] = c.r2;
      cj["r2_mean"] = c.r2_mean;
      cj["r2_stderr"] = c.r2_stderr;
      for (std::size_t r = 0; r < c.r2.size(); ++r)
        csv += std::to_string(c.layer) + "," + std::string(to_string(c.tap)) + "," +
               std::to_string(r) + "," + format_real(c.r2[r]) + "\n";
    } else {
      cj["reason"] = c.reason;
    }
    cells.push_back(std::move(cj));
  }
  write_text_file(json_path, j.dump(2) + "\n");
  write_text_file(csv_path, csv);
}

ProbeReport read_probe_report(const std::filesystem::path& json_path) {
  try {
    const auto j = nlohmann::json::parse(read_text_file(json_path));
    ProbeReport report;
    report.n_runs = j.at("n_runs").get<int>();
    for (const auto& cj : j.at("cells")) {
      ProbeCell c;
      c.layer = cj.at("layer").get<int>();
      c.tap = parse_tap(cj.at("tap").get<std::string>());
      c.present = cj.at("present").get<bool>();
      if (c.present) {
        c.r2 = cj.at("r2").get<std::vector<double>>();
        c.r2_mean = cj.at("r2_mean").get<double>();
        c.r2_stderr = cj.at("r2_stderr").get<double>();
      } else {
        c.reason = cj.value("reason", "");
      }
      report.cells.push_back(std::move(c));
    }
    return report;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Corruption, json_path.string() + ": " + e.what());
  }
}

void write_unit_scores(const UnitScores& scores, const std::filesystem::path& json_path,
                       const std::filesystem::path& csv_path) {
  write_text_file(json_path, nlohmann::json{{"r2", scores.r2}}.dump(2) + "\n");
  std::string csv = "unit,r2\n";
  for (std::size_t u = 0; u < scores.r2.size(); ++u)
    csv += std::to_string(u) + "," + format_real(scores.r2[u]) + "\n";
  write_text_file(csv_path, csv);
}

UnitScores read_unit_scores(const std::filesystem::path& json_path) {
  try {
    const auto j = nlohmann::json::parse(read_text_file(json_path));
    return {j.at("r2").get<std::vector<double>>()};
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Corruption, json_path.string() + ": " + e.what());
  }
}

}  // namespace lenrep
