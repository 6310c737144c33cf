// Copyright 2026 The QSVLM Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>

namespace qsvlm {

/// Incremental SHA-256.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(std::span<const uint8_t> bytes);
  void update(std::string_view text);
  std::array<uint8_t, 32> digest();
  std::string hex_digest();

 private:
  struct State;
  std::unique_ptr<State> state_;
};

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

/// Content hash of a directory tree: SHA-256 over (relative path, file hash)
/// pairs in sorted path order. Files named in `exclude` (top level) are
/// skipped.
std::string directory_hash(const std::filesystem::path& root, std::span<const std::string> exclude = {});

std::string to_hex(std::span<const uint8_t> bytes);

}  // namespace qsvlm
