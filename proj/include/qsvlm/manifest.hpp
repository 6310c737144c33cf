// Copyright 2026 The QSVLM Authors
// SPDX-License-Identifier: Apache-2.0
//
// Self-describing output directories: every command that writes artifacts
// leaves one manifest.json next to them.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace qsvlm {

inline constexpr const char* kManifestName = "manifest.json";

struct RunManifest {
  std::string command;
  std::vector<std::string> arguments;
  std::optional<std::string> config_path;
  std::optional<std::string> config_sha256;
  std::optional<uint64_t> seed;
  std::optional<std::string> corpus_hash;  // content hash of the input or generated corpus
  std::string output_dir;
  std::string started_at;  // ISO-8601 UTC
  std::string finished_at;
  nlohmann::json extra = nlohmann::json::object();
};

/// Current UTC time, e.g. "2026-01-31T12:00:00Z".
std::string utc_timestamp();

/// Ensures dir exists and is empty. A non-empty dir is refused unless force,
/// in which case its contents are removed.
void prepare_output_dir(const std::filesystem::path& dir, bool force);

nlohmann::json to_json(const RunManifest& manifest);
RunManifest manifest_from_json(const nlohmann::json& j);
void write_manifest(const std::filesystem::path& dir, const RunManifest& manifest);
RunManifest read_manifest(const std::filesystem::path& dir);

}  // namespace qsvlm
