// Copyright 2026 The QSVLM Authors
// SPDX-License-Identifier: Apache-2.0

#include "qsvlm/manifest.hpp"

#include <chrono>
#include <fstream>

#include "qsvlm/errors.hpp"

namespace qsvlm {

namespace fs = std::filesystem;

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void prepare_output_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    require(fs::is_directory(dir), "output path exists and is not a directory: " + dir.string());
    if (!fs::is_empty(dir)) {
      if (!force) throw InvalidArgument("output directory is not empty (use --force): " + dir.string());
      for (const auto& entry : fs::directory_iterator(dir)) fs::remove_all(entry.path());
    }
  }
  fs::create_directories(dir);
}

nlohmann::json to_json(const RunManifest& m) {
  nlohmann::json j;
  j["command"] = m.command;
  j["arguments"] = m.arguments;
  j["config_path"] = m.config_path ? nlohmann::json(*m.config_path) : nlohmann::json(nullptr);
  j["config_sha256"] = m.config_sha256 ? nlohmann::json(*m.config_sha256) : nlohmann::json(nullptr);
  j["seed"] = m.seed ? nlohmann::json(*m.seed) : nlohmann::json(nullptr);
  j["corpus_hash"] = m.corpus_hash ? nlohmann::json(*m.corpus_hash) : nlohmann::json(nullptr);
  j["output_dir"] = m.output_dir;
  j["started_at"] = m.started_at;
  j["finished_at"] = m.finished_at;
  j["extra"] = m.extra;
  return j;
}

RunManifest manifest_from_json(const nlohmann::json& j) {
  try {
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.arguments = j.at("arguments").get<std::vector<std::string>>();
    if (!j.at("config_path").is_null()) m.config_path = j["config_path"].get<std::string>();
    if (!j.at("config_sha256").is_null()) m.config_sha256 = j["config_sha256"].get<std::string>();
    if (!j.at("seed").is_null()) m.seed = j["seed"].get<uint64_t>();
    if (!j.at("corpus_hash").is_null()) m.corpus_hash = j["corpus_hash"].get<std::string>();
    m.output_dir = j.at("output_dir").get<std::string>();
    m.started_at = j.at("started_at").get<std::string>();
    m.finished_at = j.at("finished_at").get<std::string>();
    m.extra = j.value("extra", nlohmann::json::object());
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed manifest: ") + e.what());
  }
}

void write_manifest(const fs::path& dir, const RunManifest& manifest) {
  const auto tmp = dir / (std::string(kManifestName) + ".tmp");
  {
    std::ofstream out(tmp);
    require(static_cast<bool>(out), "cannot write manifest in " + dir.string());
    out << to_json(manifest).dump(2) << '\n';
  }
  fs::rename(tmp, dir / kManifestName);
}

RunManifest read_manifest(const fs::path& dir) {
  std::ifstream in(dir / kManifestName);
  if (!in) throw FormatError("no manifest in " + dir.string());
  try {
    return manifest_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("malformed manifest: ") + e.what());
  }
}

}  // namespace qsvlm
