// Copyright 2026 The QSVLM Authors
// SPDX-License-Identifier: Apache-2.0

#include <unistd.h>

#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "qsvlm/config.hpp"
#include "qsvlm/errors.hpp"
#include "qsvlm/hashing.hpp"
#include "qsvlm/manifest.hpp"

using namespace qsvlm;
using nlohmann::json;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() /
             ("qsvlm_config_" + std::to_string(::getpid())) / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("empty document gives the defaults") {
    CHECK(run_config_from_json(json::object()) == RunConfig{});
  }

  TEST_CASE("round trip through JSON") {
    RunConfig c;
    c.train.encoder.embed_dim = 64;
    c.train.encoder.vision_window = 2;
    c.train.scales.instance = false;
    c.train.weights.modality = 0.5;
    c.train.contrast = ContrastMode::kImageToText;
    c.train.recon_target = ReconTarget::kLatent;
    c.train.seed = 99;
    c.corpus.max_motifs = 3;
    c.corpus.location_prob = 0.25;
    c.eval.grounding.mode = HeatmapMode::kAttention;
    c.eval.grounding.threshold_k = 0.5;
    c.eval.probe_fractions = {0.5, 1.0};
    c.eval.probe.iterations = 42;
    CHECK(run_config_from_json(to_json(c)) == c);
    CHECK(run_config_from_json(json::parse(to_json(c).dump())) == c);
  }

  TEST_CASE("unknown keys are rejected") {
    CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"bogus": 1})")), InvalidArgument);
    CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"encoder": {"depht": 2}})")), InvalidArgument);
    CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"evaluation": {"probe": {"iters": 2}}})")),
                    InvalidArgument);
  }

  TEST_CASE("wrong types and invalid values are rejected") {
    CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"encoder": {"depth": "four"}})")), InvalidArgument);
    CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"training": {"contrast": "sideways"}})")),
                    InvalidArgument);
    CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"weights": {"local": -1}})")), InvalidArgument);
    CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"temperatures": {"tau1": 0}})")), InvalidArgument);
    CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"training": {"batch_size": 1}})")), InvalidArgument);
    CHECK_THROWS_AS(run_config_from_json(json::parse(R"([1, 2])")), InvalidArgument);
  }

  TEST_CASE("partial sections keep other defaults") {
    auto c = run_config_from_json(json::parse(R"({"training": {"steps": 5}})"));
    CHECK(c.train.steps == 5);
    CHECK(c.train.batch_size == TrainConfig{}.batch_size);
    CHECK(c.corpus == CorpusConfig{});
  }

  TEST_CASE("load from file") {
    auto dir = scratch_dir("load");
    write_text(dir / "good.json", R"({"training": {"seed": 3}})");
    CHECK(load_run_config(dir / "good.json").train.seed == 3);
    write_text(dir / "bad.json", "{not json");
    CHECK_THROWS(load_run_config(dir / "bad.json"));
    CHECK_THROWS(load_run_config(dir / "missing.json"));
  }
}

TEST_SUITE("hashing") {
  TEST_CASE("known digests") {
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  }

  TEST_CASE("incremental updates match one shot") {
    Sha256 h;
    h.update(std::string_view("a"));
    h.update(std::string_view("bc"));
    CHECK(h.hex_digest() == sha256_hex("abc"));
  }

  TEST_CASE("file and directory hashes") {
    auto dir = scratch_dir("hash");
    write_text(dir / "x.txt", "abc");
    CHECK(sha256_file(dir / "x.txt") == sha256_hex("abc"));

    std::filesystem::create_directories(dir / "sub");
    write_text(dir / "sub" / "y.txt", "y");
    const auto before = directory_hash(dir);
    CHECK(directory_hash(dir) == before);

    const std::vector<std::string> exclude = {"skip.json"};
    write_text(dir / "skip.json", "ignored");
    CHECK(directory_hash(dir, exclude) == before);
    CHECK(directory_hash(dir) != before);

    write_text(dir / "sub" / "y.txt", "z");
    CHECK(directory_hash(dir, exclude) != before);
  }

  TEST_CASE("hex encoding") {
    const std::vector<uint8_t> bytes = {0x00, 0x0f, 0xa5, 0xff};
    CHECK(to_hex(bytes) == "000fa5ff");
  }
}

TEST_SUITE("manifest") {
  TEST_CASE("round trip") {
    auto dir = scratch_dir("manifest");
    RunManifest m;
    m.command = "gen";
    m.arguments = {"--n", "3"};
    m.config_path = "cfg.json";
    m.config_sha256 = sha256_hex("x");
    m.seed = 7;
    m.corpus_hash = "abc";
    m.output_dir = dir.string();
    m.started_at = utc_timestamp();
    m.finished_at = utc_timestamp();
    m.extra["steps"] = 4;
    write_manifest(dir, m);
    auto back = read_manifest(dir);
    CHECK(to_json(back) == to_json(m));
    CHECK(std::filesystem::exists(dir / kManifestName));
  }

  TEST_CASE("timestamps are ISO-8601 UTC") {
    const auto ts = utc_timestamp();
    REQUIRE(ts.size() == 20);
    CHECK(ts[4] == '-');
    CHECK(ts[10] == 'T');
    CHECK(ts.back() == 'Z');
  }

  TEST_CASE("malformed manifest") {
    CHECK_THROWS_AS(manifest_from_json(json::parse(R"({"command": 3})")), FormatError);
  }

  TEST_CASE("output directory guard") {
    auto dir = scratch_dir("guard");
    CHECK_NOTHROW(prepare_output_dir(dir, false));
    write_text(dir / "old.txt", "x");
    CHECK_THROWS_AS(prepare_output_dir(dir, false), InvalidArgument);
    CHECK(std::filesystem::exists(dir / "old.txt"));
    CHECK_NOTHROW(prepare_output_dir(dir, true));
    CHECK_FALSE(std::filesystem::exists(dir / "old.txt"));
    CHECK(std::filesystem::is_directory(dir));
    CHECK_NOTHROW(prepare_output_dir(dir / "new" / "nested", false));
    CHECK(std::filesystem::is_directory(dir / "new" / "nested"));
  }
}
