// Copyright 2026 The lenrep Authors
// SPDX-License-Identifier: Apache-2.0

#include "lenrep/capture.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>
#include <thread>

#include "lenrep/error.hpp"
#include "lenrep/io.hpp"
#include "lenrep/hash.hpp"

namespace lenrep {

static_assert(std::endian::native == std::endian::little);

namespace {

constexpr char kMagic[8] = {'L', 'N', 'R', 'P', 'A', 'C', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

std::size_t slot_of(const ActivationDataset& d, int layer, TapPoint tap) {
  const auto li = std::find(d.layers.begin(), d.layers.end(), layer);
  const auto ti = std::find(d.taps.begin(), d.taps.end(), tap);
  if (li == d.layers.end() || ti == d.taps.end()) return d.groups.size();
  return static_cast<std::size_t>(li - d.layers.begin()) * d.taps.size() +
         static_cast<std::size_t>(ti - d.taps.begin());
}

std::vector<std::size_t> rows_in(const ActivationDataset& d,
                                 const std::vector<std::uint32_t>& examples) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < d.keys.size(); ++i)
    if (std::binary_search(examples.begin(), examples.end(), d.keys[i].example_id))
      rows.push_back(i);
  return rows;
}

class Writer {
 public:
  template <typename T>
  void put(T value) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
    bytes.insert(bytes.end(), p, p + sizeof(T));
  }
  void put_string(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    bytes.insert(bytes.end(), s.begin(), s.end());
  }
  void put_ids(const std::vector<std::uint32_t>& ids) {
    put(static_cast<std::uint64_t>(ids.size()));
    for (auto id : ids) put(id);
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::vector<std::uint32_t> get_ids() {
    const auto n = get<std::uint64_t>();
    need(n * sizeof(std::uint32_t));
    std::vector<std::uint32_t> ids(n);
    for (auto& id : ids) id = get<std::uint32_t>();
    return ids;
  }
  void get_floats(std::span<float> out) {
    need(out.size_bytes());
    std::memcpy(out.data(), bytes_.data() + pos_, out.size_bytes());
    pos_ += out.size_bytes();
  }
  bool done() const noexcept { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (n > bytes_.size() - pos_) fail(ErrorKind::Corruption, "activation dataset is truncated");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

bool ActivationDataset::has(int layer, TapPoint tap) const noexcept {
  return slot_of(*this, layer, tap) < groups.size();
}

const Matrix& ActivationDataset::group(int layer, TapPoint tap) const {
  const auto s = slot_of(*this, layer, tap);
  if (s >= groups.size())
    fail(ErrorKind::Config, "dataset has no records for layer " + std::to_string(layer) + " " +
                                std::string(to_string(tap)));
  return groups[s];
}

ActivationRecord ActivationDataset::record(int layer, TapPoint tap, std::size_t index) const {
  const Matrix& g = group(layer, tap);
  if (index >= keys.size()) fail(ErrorKind::Config, "record index out of range");
  return {keys[index].example_id, layer, tap, keys[index].timestep, g.row(index)};
}

std::vector<double> ActivationDataset::timesteps() const {
  std::vector<double> y(keys.size());
  std::transform(keys.begin(), keys.end(), y.begin(),
                 [](const RecordKey& k) { return static_cast<double>(k.timestep); });
  return y;
}

std::vector<std::size_t> ActivationDataset::train_rows() const {
  return rows_in(*this, train_examples);
}
std::vector<std::size_t> ActivationDataset::val_rows() const {
  return rows_in(*this, val_examples);
}

void split_examples(ActivationDataset& dataset, std::vector<std::uint32_t> example_ids,
                    double val_fraction, std::uint64_t seed) {
  if (!(val_fraction >= 0.0 && val_fraction < 1.0))
    fail(ErrorKind::Config, "val_fraction must be in [0, 1)");
  std::sort(example_ids.begin(), example_ids.end());
  example_ids.erase(std::unique(example_ids.begin(), example_ids.end()), example_ids.end());
  std::mt19937_64 rng(seed);
  std::shuffle(example_ids.begin(), example_ids.end(), rng);
  const std::size_t n = example_ids.size();
  auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n)));
  if (n >= 2 && val_fraction > 0.0) n_val = std::clamp<std::size_t>(n_val, 1, n - 1);
  dataset.val_examples.assign(example_ids.begin(), example_ids.begin() + static_cast<long>(n_val));
  dataset.train_examples.assign(example_ids.begin() + static_cast<long>(n_val), example_ids.end());
  std::sort(dataset.val_examples.begin(), dataset.val_examples.end());
  std::sort(dataset.train_examples.begin(), dataset.train_examples.end());
}

ActivationDataset collect_states(const Model& model, const std::vector<PromptItem>& prompts,
                                 const std::vector<TapPoint>& taps, const std::vector<int>& layers,
                                 const DecodeConfig& decode, const CollectOptions& options) {
  ActivationDataset ds;
  ds.d_model = static_cast<std::size_t>(model.config().d_model);
  ds.layers = layers;
  ds.taps = taps;
  ds.provenance = options.provenance;
  ds.provenance.decode = decode.describe();
  ds.groups.assign(layers.size() * taps.size(), Matrix(0, ds.d_model));
  for (int l : layers)
    if (l < 1 || l > model.config().n_layers)
      fail(ErrorKind::Config, "layer " + std::to_string(l) + " out of range");

  std::vector<std::uint32_t> ids;
  for (const auto& p : prompts) ids.push_back(p.example_id);
  split_examples(ds, ids, options.val_fraction, options.split_seed);
  if (decode.max_new_tokens == 0 || prompts.empty()) return ds;

  const CaptureRequest request{layers, taps};
  std::vector<std::vector<Matrix>> per_prompt(prompts.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < prompts.size(); i = next++)
      per_prompt[i] =
          generate(model, prompts[i].tokens, decode, Hooks{&request, nullptr}).captures;
  };
  const unsigned n_threads = std::max(1U, options.threads);
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }

  std::vector<std::size_t> order(prompts.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return prompts[a].example_id < prompts[b].example_id;
  });
  for (std::size_t i = 1; i < order.size(); ++i)
    if (prompts[order[i]].example_id == prompts[order[i - 1]].example_id)
      fail(ErrorKind::Data, "duplicate example id " + std::to_string(prompts[order[i]].example_id));

  std::size_t total = 0;
  for (const auto& c : per_prompt) total += c.size();
  for (auto& g : ds.groups) g.resize(total, ds.d_model);
  ds.keys.reserve(total);
  std::size_t row = 0;
  for (std::size_t i : order) {
    const auto& steps = per_prompt[i];
    for (std::size_t t = 0; t < steps.size(); ++t, ++row) {
      ds.keys.push_back({prompts[i].example_id, static_cast<std::uint32_t>(t + 1)});
      for (std::size_t s = 0; s < ds.groups.size(); ++s)
        std::copy_n(steps[t].row(s).begin(), ds.d_model, ds.groups[s].row(row).begin());
    }
  }
  return ds;
}

void write_dataset(const ActivationDataset& d, const std::filesystem::path& path) {
  if (d.groups.size() != d.layers.size() * d.taps.size())
    fail(ErrorKind::Internal, "dataset groups do not match its layers and taps");
  Writer w;
  for (char c : kMagic) w.put(c);
  w.put(kVersion);
  w.put(static_cast<std::uint32_t>(d.d_model));
  w.put(static_cast<std::uint32_t>(d.layers.size()));
  for (int l : d.layers) w.put(static_cast<std::uint32_t>(l));
  w.put(static_cast<std::uint32_t>(d.taps.size()));
  for (TapPoint t : d.taps) w.put(static_cast<std::uint8_t>(t));
  w.put(static_cast<std::uint64_t>(d.keys.size()));
  w.put_string(d.provenance.checkpoint_hash);
  w.put_string(d.provenance.prompt_kind);
  w.put_string(d.provenance.decode);
  w.put_ids(d.train_examples);
  w.put_ids(d.val_examples);
  w.bytes.reserve(w.bytes.size() +
                  d.groups.size() * d.keys.size() * (8 + d.d_model * sizeof(float)) + 32);
  for (const auto& g : d.groups) {
    for (std::size_t i = 0; i < d.keys.size(); ++i) {
      w.put(d.keys[i].example_id);
      w.put(d.keys[i].timestep);
      const auto r = g.row(i);
      const auto* p = reinterpret_cast<const std::uint8_t*>(r.data());
      w.bytes.insert(w.bytes.end(), p, p + r.size() * sizeof(float));
    }
  }
  const Digest digest = sha256(w.bytes);
  w.bytes.insert(w.bytes.end(), digest.begin(), digest.end());

  auto out = open_output(path);
  out.write(reinterpret_cast<const char*>(w.bytes.data()),
            static_cast<std::streamsize>(w.bytes.size()));
  if (!out) fail(ErrorKind::Data, "failed writing dataset " + path.string());
}

ActivationDataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Data, "missing dataset " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof kMagic + sizeof(Digest))
    fail(ErrorKind::Corruption, "activation dataset is truncated");
  const std::span<const std::uint8_t> body(bytes.data(), bytes.size() - sizeof(Digest));
  const Digest digest = sha256(body);
  if (!std::equal(digest.begin(), digest.end(), bytes.end() - sizeof(Digest)))
    fail(ErrorKind::Corruption, "activation dataset checksum mismatch: " + path.string());

  Reader r(body);
  for (char c : kMagic)
    if (r.get<char>() != c) fail(ErrorKind::Corruption, "not an activation dataset");
  if (r.get<std::uint32_t>() != kVersion)
    fail(ErrorKind::Corruption, "unsupported activation dataset version");
  ActivationDataset d;
  d.d_model = r.get<std::uint32_t>();
  d.layers.resize(r.get<std::uint32_t>());
  for (int& l : d.layers) l = static_cast<int>(r.get<std::uint32_t>());
  d.taps.resize(r.get<std::uint32_t>());
  for (TapPoint& t : d.taps) {
    const auto v = r.get<std::uint8_t>();
    if (v > 3) fail(ErrorKind::Corruption, "bad tap id in dataset header");
    t = static_cast<TapPoint>(v);
  }
  const auto n = r.get<std::uint64_t>();
  d.provenance.checkpoint_hash = r.get_string();
  d.provenance.prompt_kind = r.get_string();
  d.provenance.decode = r.get_string();
  d.train_examples = r.get_ids();
  d.val_examples = r.get_ids();
  const std::size_t n_groups = d.layers.size() * d.taps.size();
  if (d.d_model == 0 || n > body.size())
    fail(ErrorKind::Corruption, "activation dataset header is inconsistent");
  d.keys.resize(n);
  for (std::size_t s = 0; s < n_groups; ++s) {
    Matrix g(n, d.d_model);
    for (std::size_t i = 0; i < n; ++i) {
      const RecordKey key{r.get<std::uint32_t>(), r.get<std::uint32_t>()};
      if (s == 0) {
        d.keys[i] = key;
      } else if (!(key == d.keys[i])) {
        fail(ErrorKind::Corruption, "record keys differ between groups");
      }
      r.get_floats(g.row(i));
    }
    d.groups.push_back(std::move(g));
  }
  if (!r.done()) fail(ErrorKind::Corruption, "trailing bytes in activation dataset");
  return d;
}

std::optional<std::string> provenance_warning(const ActivationDataset& dataset,
                                              const std::string& checkpoint_hash) {
  if (dataset.provenance.checkpoint_hash == checkpoint_hash) return std::nullopt;
  return "dataset was collected from checkpoint " + dataset.provenance.checkpoint_hash +
         ", not " + checkpoint_hash;
}

}  // namespace lenrep
