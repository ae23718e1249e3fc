// Copyright 2026 The lenrep Authors
// SPDX-License-Identifier: Apache-2.0

#include "lenrep/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "lenrep/error.hpp"
#include "lenrep/io.hpp"

namespace lenrep {

TokenId Vocab::content(int index) {
  if (index < 0 || index >= kContentCount) fail(ErrorKind::Config, "content index out of range");
  return kContentBase + index;
}

TokenId Vocab::filler(int index) {
  if (index < 0 || index >= kFillerCount) fail(ErrorKind::Config, "filler index out of range");
  return kFillerBase + index;
}

TokenId Vocab::number(int n) {
  if (n < 0 || n > kMaxNumber)
    fail(ErrorKind::Config, "count " + std::to_string(n) + " has no number token (max " +
                                std::to_string(kMaxNumber) + ")");
  return kNumberBase + n;
}

int Vocab::number_value(TokenId t) {
  if (!is_number(t)) fail(ErrorKind::Config, "not a number token");
  return t - kNumberBase;
}

std::string Vocab::layout() {
  std::ostringstream os;
  os << "control=0:" << kControlCount << "\n"
     << "content=" << kContentBase << ":" << kContentCount << "\n"
     << "filler=" << kFillerBase << ":" << kFillerCount << "\n"
     << "number=" << kNumberBase << ":" << kNumberCount << "\n";
  return os.str();
}

TokenSequence extract_gold(const TokenSequence& source) {
  TokenSequence gold;
  std::copy_if(source.begin(), source.end(), std::back_inserter(gold), Vocab::is_content);
  return gold;
}

std::string_view to_string(PromptKind kind) {
  switch (kind) {
    case PromptKind::NoConstraint: return "no-constraint";
    case PromptKind::Length: return "length";
    case PromptKind::Priming: return "priming";
  }
  return "?";
}

PromptKind parse_prompt_kind(std::string_view text) {
  for (auto k : kAllPromptKinds)
    if (to_string(k) == text) return k;
  fail(ErrorKind::Config, "unknown prompt kind '" + std::string(text) + "'");
}

void CorpusConfig::validate() const {
  if (n_examples == 0) fail(ErrorKind::Data, "corpus must contain at least one example");
  if (min_len < 8 || max_len > 32 || min_len > max_len)
    fail(ErrorKind::Config, "source length range must lie within [8, 32]");
  if (!(content_prob > 0.0 && content_prob <= 1.0))
    fail(ErrorKind::Config, "content_prob must be in (0, 1]");
}

Corpus generate_corpus(const CorpusConfig& config) {
  config.validate();
  Corpus corpus;
  corpus.config = config;
  corpus.examples.reserve(config.n_examples);

  std::mt19937_64 rng(config.seed);
  std::uniform_int_distribution<int> length(config.min_len, config.max_len);
  std::bernoulli_distribution is_content(config.content_prob);
  std::uniform_int_distribution<int> content(0, Vocab::kContentCount - 1);
  std::uniform_int_distribution<int> filler(0, Vocab::kFillerCount - 1);

  for (std::size_t i = 0; i < config.n_examples; ++i) {
    CompressionExample ex;
    ex.id = static_cast<std::uint32_t>(i);
    const int n = length(rng);
    ex.source.reserve(static_cast<std::size_t>(n));
    for (int t = 0; t < n; ++t)
      ex.source.push_back(is_content(rng) ? Vocab::content(content(rng))
                                          : Vocab::filler(filler(rng)));
    ex.gold = extract_gold(ex.source);
    corpus.examples.push_back(std::move(ex));
  }
  return corpus;
}

Corpus split_corpus(Corpus corpus, const SplitRatios& ratios, std::uint64_t seed) {
  if (ratios.train <= 0.0 || ratios.val <= 0.0 || ratios.test <= 0.0)
    fail(ErrorKind::Config, "every split ratio must be positive");
  if (std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9)
    fail(ErrorKind::Config, "split ratios must sum to 1");

  const std::size_t n = corpus.examples.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  const auto n_train = std::min(n, static_cast<std::size_t>(std::llround(ratios.train * n)));
  const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::llround(ratios.val * n)));

  CorpusSplit split;
  split.seed = seed;
  split.train.assign(order.begin(), order.begin() + n_train);
  split.val.assign(order.begin() + n_train, order.begin() + n_train + n_val);
  split.test.assign(order.begin() + n_train + n_val, order.end());
  corpus.split = std::move(split);
  return corpus;
}

double mean_compression_ratio(const Corpus& corpus) {
  if (corpus.examples.empty()) fail(ErrorKind::Data, "empty corpus");
  double sum = 0.0;
  for (const auto& ex : corpus.examples)
    sum += static_cast<double>(ex.keep_len()) / static_cast<double>(ex.src_len());
  return sum / static_cast<double>(corpus.examples.size());
}

TokenSequence render_prompt(const CompressionExample& ex, PromptKind kind) {
  using enum ControlToken;
  const auto c = Vocab::control;
  TokenSequence out;
  out.reserve(ex.source.size() + 10);
  out.push_back(c(Bos));
  if (kind == PromptKind::Priming) {
    out.push_back(c(Len));
    out.push_back(Vocab::number(ex.src_len()));
  }
  out.push_back(c(Src));
  out.insert(out.end(), ex.source.begin(), ex.source.end());
  if (kind == PromptKind::Priming) {
    out.push_back(c(Keep));
    out.push_back(Vocab::number(ex.keep_len()));
  }
  if (kind != PromptKind::NoConstraint) {
    out.push_back(c(Del));
    out.push_back(Vocab::number(ex.del_len()));
  }
  out.push_back(c(Compress));
  return out;
}

RenderedSequence render_training_sequence(const CompressionExample& ex, PromptKind kind) {
  RenderedSequence r;
  r.tokens = render_prompt(ex, kind);
  r.target_begin = r.tokens.size();
  r.tokens.insert(r.tokens.end(), ex.gold.begin(), ex.gold.end());
  r.tokens.push_back(Vocab::eos());
  return r;
}

namespace {

std::string join_ids(const auto& ids) {
  std::string s;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) s.push_back(' ');
    s += std::to_string(ids[i]);
  }
  return s;
}

template <typename T>
std::vector<T> parse_ids(std::string_view text) {
  std::vector<T> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    while (pos < text.size() && text[pos] == ' ') ++pos;
    if (pos >= text.size()) break;
    T value{};
    auto [end, ec] = std::from_chars(text.data() + pos, text.data() + text.size(), value);
    if (ec != std::errc()) fail(ErrorKind::Corruption, "malformed id list");
    out.push_back(value);
    pos = static_cast<std::size_t>(end - text.data());
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::filesystem::path header_path(const std::filesystem::path& path) {
  auto p = path;
  p += ".header";
  return p;
}

}  // namespace

void write_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  {
    auto out = open_output(path);
    for (const auto& ex : corpus.examples)
      out << ex.id << '\t' << join_ids(ex.source) << '\t' << join_ids(ex.gold) << '\n';
  }
  auto hdr = open_output(header_path(path));
  hdr << "format=lenrep-corpus\nversion=1\n";
  std::istringstream layout(Vocab::layout());
  for (std::string line; std::getline(layout, line);) hdr << "vocab." << line << '\n';
  hdr << "config.n_examples=" << corpus.config.n_examples << '\n'
      << "config.min_len=" << corpus.config.min_len << '\n'
      << "config.max_len=" << corpus.config.max_len << '\n'
      << "config.content_prob=" << format_double(corpus.config.content_prob) << '\n'
      << "seed=" << corpus.config.seed << '\n'
      << "split.seed=" << corpus.split.seed << '\n'
      << "split.train=" << join_ids(corpus.split.train) << '\n'
      << "split.val=" << join_ids(corpus.split.val) << '\n'
      << "split.test=" << join_ids(corpus.split.test) << '\n';
}

Corpus read_corpus(const std::filesystem::path& path) {
  std::ifstream hdr(header_path(path), std::ios::binary);
  if (!hdr) fail(ErrorKind::Data, "missing corpus header " + header_path(path).string());
  std::map<std::string, std::string, std::less<>> kv;
  for (std::string line; std::getline(hdr, line);) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(ErrorKind::Corruption, "malformed corpus header line");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto get = [&](std::string_view key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) fail(ErrorKind::Corruption, "corpus header lacks " + std::string(key));
    return it->second;
  };
  if (get("format") != "lenrep-corpus") fail(ErrorKind::Corruption, "not a corpus header");
  std::istringstream layout(Vocab::layout());
  for (std::string line; std::getline(layout, line);) {
    const auto eq = line.find('=');
    if (get("vocab." + line.substr(0, eq)) != line.substr(eq + 1))
      fail(ErrorKind::Config, "corpus vocabulary layout does not match this build");
  }

  Corpus corpus;
  try {
    corpus.config.n_examples = std::stoull(get("config.n_examples"));
    corpus.config.min_len = std::stoi(get("config.min_len"));
    corpus.config.max_len = std::stoi(get("config.max_len"));
    corpus.config.content_prob = std::stod(get("config.content_prob"));
    corpus.config.seed = std::stoull(get("seed"));
    corpus.split.seed = std::stoull(get("split.seed"));
  } catch (const std::logic_error&) {
    fail(ErrorKind::Corruption, "malformed numeric field in corpus header");
  }
  corpus.split.train = parse_ids<std::size_t>(get("split.train"));
  corpus.split.val = parse_ids<std::size_t>(get("split.val"));
  corpus.split.test = parse_ids<std::size_t>(get("split.test"));

  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Data, "cannot open " + path.string());
  for (std::string line; std::getline(in, line);) {
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) fail(ErrorKind::Corruption, "malformed corpus line");
    CompressionExample ex;
    const auto ids = parse_ids<std::uint32_t>(std::string_view(line).substr(0, t1));
    if (ids.size() != 1) fail(ErrorKind::Corruption, "malformed example id");
    ex.id = ids[0];
    ex.source = parse_ids<TokenId>(std::string_view(line).substr(t1 + 1, t2 - t1 - 1));
    ex.gold = parse_ids<TokenId>(std::string_view(line).substr(t2 + 1));
    if (ex.gold != extract_gold(ex.source))
      fail(ErrorKind::Corruption, "gold summary inconsistent with source in example " +
                                      std::to_string(ex.id));
    corpus.examples.push_back(std::move(ex));
  }
  if (corpus.examples.size() != corpus.config.n_examples)
    fail(ErrorKind::Corruption, "corpus example count does not match header");
  return corpus;
}

}  // namespace lenrep
