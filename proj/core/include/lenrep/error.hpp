// Copyright 2026 The lenrep Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace lenrep {

enum class ErrorKind {
  Config,      // invalid configuration or argument
  Data,        // missing, empty, or inconsistent data
  Corruption,  // checksum or format failure while reading a file
  Provenance,  // artifact produced from a different upstream input
  Length,      // sequence exceeds the model context
  Degenerate,  // statistic undefined for the given input
  Internal,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace lenrep
