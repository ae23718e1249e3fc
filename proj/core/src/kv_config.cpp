// Copyright 2026 The lenrep Authors
// SPDX-License-Identifier: Apache-2.0

#include "lenrep/kv_config.hpp"

#include <charconv>
#include <sstream>

#include "lenrep/error.hpp"
#include "lenrep/io.hpp"

namespace lenrep {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end)
    fail(ErrorKind::Config, "config key '" + key + "': '" + text + "' is not a valid number");
  return value;
}

}  // namespace

KvConfig KvConfig::parse(const std::string& text, const std::string& origin) {
  KvConfig cfg;
  std::istringstream in(text);
  std::string line;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      fail(ErrorKind::Config, origin + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    if (key.empty())
      fail(ErrorKind::Config, origin + ":" + std::to_string(lineno) + ": empty key");
    cfg.values_[key] = trim(std::string_view(line).substr(eq + 1));
  }
  return cfg;
}

KvConfig KvConfig::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path))
    fail(ErrorKind::Config, "config file " + path.string() + " does not exist");
  return parse(read_text_file(path), path.string());
}

const std::string* KvConfig::find(const std::string& key) const {
  used_[key] = true;
  const auto it = values_.find(key);
  return it == values_.end() ? nullptr : &it->second;
}

std::string KvConfig::get(const std::string& key, const std::string& fallback) const {
  const auto* v = find(key);
  return v ? *v : fallback;
}

std::int64_t KvConfig::get_int(const std::string& key, std::int64_t fallback) const {
  const auto* v = find(key);
  return v ? parse_number<std::int64_t>(key, *v) : fallback;
}

std::uint64_t KvConfig::get_uint(const std::string& key, std::uint64_t fallback) const {
  const auto* v = find(key);
  return v ? parse_number<std::uint64_t>(key, *v) : fallback;
}

double KvConfig::get_real(const std::string& key, double fallback) const {
  const auto* v = find(key);
  return v ? parse_number<double>(key, *v) : fallback;
}

std::vector<std::string> KvConfig::get_list(const std::string& key,
                                            const std::vector<std::string>& fallback) const {
  const auto* v = find(key);
  if (!v) return fallback;
  std::vector<std::string> out;
  std::istringstream in(*v);
  for (std::string item; std::getline(in, item, ',');)
    if (auto t = trim(item); !t.empty()) out.push_back(std::move(t));
  return out;
}

std::vector<std::string> KvConfig::unused_keys() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : values_)
    if (!used_.contains(k)) out.push_back(k);
  return out;
}

}  // namespace lenrep
