// Copyright 2026 The lenrep Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace lenrep {

using Digest = std::array<std::uint8_t, 32>;

/// SHA-256 of a byte range.
Digest sha256(std::span<const std::uint8_t> bytes);
std::string to_hex(const Digest& digest);
std::string sha256_hex(std::string_view text);
/// Hex SHA-256 of a file's contents.
std::string file_sha256(const std::filesystem::path& path);

/// Sub-seed derived from a master seed and a stage name. Adding a new stage
/// never changes the seeds of existing ones.
std::uint64_t derive_seed(std::uint64_t master, std::string_view stage);

}  // namespace lenrep
