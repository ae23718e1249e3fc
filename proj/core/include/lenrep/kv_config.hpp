// Copyright 2026 The lenrep Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace lenrep {

/// `key = value` lines; `#` starts a comment. Later keys override earlier
/// ones. Lists are comma separated.
class KvConfig {
 public:
  static KvConfig parse(const std::string& text, const std::string& origin = "<config>");
  static KvConfig load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool contains(const std::string& key) const { return values_.contains(key); }

  std::string get(const std::string& key, const std::string& fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const;
  double get_real(const std::string& key, double fallback) const;
  std::vector<std::string> get_list(const std::string& key,
                                    const std::vector<std::string>& fallback) const;

  /// Keys that no getter has asked for; usually typos.
  std::vector<std::string> unused_keys() const;
  const std::map<std::string, std::string>& values() const noexcept { return values_; }

 private:
  const std::string* find(const std::string& key) const;

  std::map<std::string, std::string> values_;
  mutable std::map<std::string, bool> used_;
};

}  // namespace lenrep
