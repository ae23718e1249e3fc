// Copyright 2026 The lenrep Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>

namespace lenrep {

/// Shortest decimal text that round-trips the double exactly.
std::string format_real(double value);
std::string format_real(float value);

/// Binary output stream; creates the parent directory and throws Data when
/// the file cannot be opened.
std::ofstream open_output(const std::filesystem::path& path);

void write_text_file(const std::filesystem::path& path, std::string_view contents);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace lenrep
