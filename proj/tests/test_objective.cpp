// Copyright 2026 The QSVLM Authors
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "qsvlm/errors.hpp"
#include "qsvlm/hashing.hpp"
#include "qsvlm/objective.hpp"
#include "test_support.hpp"

using namespace qsvlm;
using namespace qsvlm::testing;

namespace {

TrainConfig tiny_config() {
  TrainConfig c;
  c.encoder.embed_dim = 16;
  c.encoder.depth = 1;
  c.encoder.heads = 2;
  c.decoder_depth = 1;
  c.batch_size = 4;
  c.steps = 3;
  c.seed = 11;
  return c;
}

const Dataset& tiny_data() {
  static const Dataset d = Dataset::from_samples(generate_corpus(12, CorpusConfig{}, 5));
  return d;
}

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("qsvlm_objective_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  return dir / name;
}

bool same_params(const Checkpoint& a, const Checkpoint& b) {
  if (a.tensors.size() != b.tensors.size()) return false;
  for (size_t i = 0; i < a.tensors.size(); ++i) {
    if (a.tensors[i].first != b.tensors[i].first) return false;
    if (!torch::equal(a.tensors[i].second, b.tensors[i].second)) return false;
  }
  return true;
}

std::vector<std::string> untimed(const std::vector<MetricsRecord>& log) {
  std::vector<std::string> out;
  for (const auto& r : log) out.push_back(metrics_line_untimed(r));
  return out;
}

bool has_grad(const torch::nn::Module& m) {
  for (const auto& p : m.parameters()) {
    if (p.grad().defined() && p.grad().abs().sum().item<double>() > 0.0) return true;
  }
  return false;
}

}  // namespace

TEST_SUITE("objective") {
  TEST_CASE("weighted sum of components") {
    LossBundle b{1.0, 2.0, 3.0, 4.0, 0.0};
    CHECK(combine(b, LossWeights{}) == 10.0);
    CHECK(combine(b, LossWeights{1.0, 0.0, 0.0, 0.0}) == 1.0);

    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 5.0);
    for (int trial = 0; trial < 50; ++trial) {
      LossBundle c{u(rng), u(rng), u(rng), u(rng), 0.0};
      LossWeights w{u(rng), u(rng), u(rng), u(rng)};
      const double expected = w.global * c.l_g + w.local * *c.l_l + w.instance * *c.l_i + w.modality * *c.l_m;
      CHECK(std::abs(combine(c, w) - expected) < 1e-7);
    }
  }

  TEST_CASE("absent components contribute nothing") {
    LossBundle b{2.0, std::nullopt, 3.0, std::nullopt, 0.0};
    CHECK(combine(b, LossWeights{1.0, 7.0, 2.0, 9.0}) == 8.0);
  }

  TEST_CASE("weight validation") {
    CHECK_THROWS_AS(LossWeights({-1.0, 1.0, 1.0, 1.0}).validate(), InvalidArgument);
    CHECK_THROWS_AS(LossWeights({0.0, 0.0, 0.0, 0.0}).validate(), InvalidArgument);
    CHECK_NOTHROW(LossWeights({0.0, 1.0, 0.0, 0.0}).validate());
  }

  TEST_CASE("seven toggle rows") {
    auto rows = ablation_toggles();
    REQUIRE(rows.size() == 7);
    std::set<std::string> labels;
    for (const auto& t : rows) {
      CHECK((t.local || t.instance || t.modality));
      labels.insert(t.label());
    }
    CHECK(labels.size() == 7);
    CHECK(rows.back() == ScaleToggles{true, true, true});
    CHECK(ScaleToggles{false, false, false}.label() == "global-only");
  }

  TEST_CASE("every toggle combination computes") {
    auto cfg = tiny_config();
    for (const auto& t : ablation_toggles()) {
      cfg.scales = t;
      torch::manual_seed(1);
      PretrainModel model(cfg.model_options());
      std::mt19937_64 rng(1);
      auto batch = make_batch(tiny_data(), {0, 1, 2, 3}, cfg.encoder);
      auto out = combined_loss(model, batch, cfg, rng);
      CHECK(out.bundle.l_l.has_value() == t.local);
      CHECK(out.bundle.l_i.has_value() == t.instance);
      CHECK(out.bundle.l_m.has_value() == t.modality);
      CHECK(out.bundle.total == combine(out.bundle, cfg.weights));
      CHECK(std::abs(scalar(out.total) - out.bundle.total) < 1e-4);
    }
  }

  TEST_CASE("disabled scales receive no gradient") {
    auto cfg = tiny_config();
    cfg.scales = {true, false, false};
    torch::manual_seed(2);
    PretrainModel model(cfg.model_options());
    std::mt19937_64 rng(2);
    auto out = combined_loss(model, make_batch(tiny_data(), {0, 1, 2, 3}, cfg.encoder), cfg, rng);
    out.total.backward();
    CHECK_FALSE(has_grad(*model->match_head));
    CHECK_FALSE(has_grad(*model->decoder));
    CHECK_FALSE(has_grad(*model->mlm_head));
    CHECK(has_grad(*model->vision));
    CHECK(has_grad(*model->text));

    model->zero_grad();
    cfg.scales = {false, true, true};
    out = combined_loss(model, make_batch(tiny_data(), {0, 1, 2, 3}, cfg.encoder), cfg, rng);
    out.total.backward();
    CHECK(has_grad(*model->match_head));
    CHECK(has_grad(*model->decoder));
    CHECK(has_grad(*model->mlm_head));
  }

  TEST_CASE("instance scale requires two samples") {
    auto cfg = tiny_config();
    cfg.batch_size = 1;
    CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
    cfg.scales.instance = false;
    CHECK_NOTHROW(cfg.validate());
  }

  TEST_CASE("zero steps returns the initialization") {
    auto cfg = tiny_config();
    cfg.steps = 0;
    auto result = train(cfg, tiny_data());
    CHECK(result.log.empty());
    CHECK(result.checkpoint.step == 0);
    Trainer fresh(cfg);
    CHECK(same_params(result.checkpoint, fresh.checkpoint()));
  }

  TEST_CASE("same seed gives identical logs and parameters") {
    auto cfg = tiny_config();
    auto a = train(cfg, tiny_data());
    auto b = train(cfg, tiny_data());
    REQUIRE(a.log.size() == 3);
    CHECK(untimed(a.log) == untimed(b.log));
    CHECK(same_params(a.checkpoint, b.checkpoint));
    for (size_t i = 0; i < a.log.size(); ++i) CHECK(a.log[i].step == static_cast<int64_t>(i + 1));

    cfg.seed = 12;
    auto c = train(cfg, tiny_data());
    CHECK(untimed(a.log) != untimed(c.log));
  }

  TEST_CASE("metrics lines omit disabled scales") {
    MetricsRecord r{4, {1.5, std::nullopt, 0.5, std::nullopt, 2.0}, 12.0};
    auto line = metrics_line(r);
    CHECK(line.find("\"l_l\"") == std::string::npos);
    CHECK(line.find("\"l_m\"") == std::string::npos);
    CHECK(line.find("\"l_i\":0.5") != std::string::npos);
    CHECK(line.find("\"wall_ms\"") != std::string::npos);
    CHECK(metrics_line_untimed(r).find("wall_ms") == std::string::npos);
  }

  TEST_CASE("loss decreases on a small corpus") {
    auto cfg = tiny_config();
    cfg.steps = 60;
    cfg.learning_rate = 1e-3;
    auto result = train(cfg, tiny_data());
    auto mean_total = [&](size_t from, size_t to) {
      double s = 0.0;
      for (size_t i = from; i < to; ++i) s += result.log[i].losses.total;
      return s / static_cast<double>(to - from);
    };
    CHECK(mean_total(50, 60) < mean_total(0, 10));
  }

  TEST_CASE("non-finite loss aborts with the step") {
    auto cfg = tiny_config();
    cfg.weights.global = std::numeric_limits<double>::max();
    Trainer trainer(cfg);
    try {
      trainer.step(tiny_data());
      FAIL("expected NonFiniteLoss");
    } catch (const NonFiniteLoss& e) {
      CHECK(e.step == 1);
      CHECK(std::isfinite(e.bundle.l_g));
      CHECK_FALSE(std::isfinite(e.bundle.total));
      CHECK(std::string(e.what()).find("l_g=") != std::string::npos);
    }
    CHECK(trainer.steps_done() == 0);
  }

  TEST_CASE("empty dataset is rejected") {
    Dataset empty;
    CHECK_THROWS_AS(train(tiny_config(), empty), InvalidArgument);
  }
}

TEST_SUITE("checkpoint") {
  TEST_CASE("round trip preserves the next step") {
    auto cfg = tiny_config();
    Trainer trainer(cfg);
    trainer.step(tiny_data());
    trainer.step(tiny_data());
    const auto path = scratch("round_trip.qsvlm");
    save_checkpoint(trainer.checkpoint(), path);

    auto loaded = load_checkpoint(path);
    CHECK(loaded.step == 2);
    CHECK(loaded.config == cfg);
    CHECK(same_params(loaded, trainer.checkpoint()));

    Trainer resumed(loaded);
    CHECK(resumed.step(tiny_data()) == trainer.step(tiny_data()));
    CHECK(same_params(resumed.checkpoint(), trainer.checkpoint()));
  }

  TEST_CASE("resume equals an uninterrupted run") {
    auto cfg = tiny_config();
    cfg.steps = 4;
    auto full = train(cfg, tiny_data());

    cfg.steps = 2;
    auto first = train(cfg, tiny_data());
    const auto path = scratch("resume.qsvlm");
    save_checkpoint(first.checkpoint, path);
    cfg.steps = 4;
    auto second = train(cfg, tiny_data(), {}, load_checkpoint(path));

    auto joined = untimed(first.log);
    for (const auto& line : untimed(second.log)) joined.push_back(line);
    CHECK(joined == untimed(full.log));
    CHECK(same_params(second.checkpoint, full.checkpoint));
  }

  TEST_CASE("identical runs write identical files") {
    auto cfg = tiny_config();
    const auto a = scratch("same_a.qsvlm");
    const auto b = scratch("same_b.qsvlm");
    save_checkpoint(train(cfg, tiny_data()).checkpoint, a);
    save_checkpoint(train(cfg, tiny_data()).checkpoint, b);
    CHECK(sha256_file(a) == sha256_file(b));
  }

  TEST_CASE("damaged files are rejected") {
    const auto path = scratch("damaged.qsvlm");
    save_checkpoint(Trainer(tiny_config()).checkpoint(), path);
    std::string bytes;
    {
      std::ifstream in(path, std::ios::binary);
      bytes.assign(std::istreambuf_iterator<char>(in), {});
    }
    auto write = [&](const std::string& data) {
      std::ofstream out(path, std::ios::binary | std::ios::trunc);
      out.write(data.data(), static_cast<std::streamsize>(data.size()));
    };

    SUBCASE("truncated") {
      write(bytes.substr(0, bytes.size() / 2));
      CHECK_THROWS_AS(load_checkpoint(path), FormatError);
    }
    SUBCASE("flipped byte") {
      auto copy = bytes;
      copy[copy.size() / 2] ^= 0x5a;
      write(copy);
      CHECK_THROWS_AS(load_checkpoint(path), FormatError);
    }
    SUBCASE("wrong magic") {
      auto copy = bytes;
      copy[0] = 'X';
      write(copy);
      CHECK_THROWS_AS(load_checkpoint(path), FormatError);
    }
    SUBCASE("future version") {
      auto copy = bytes;
      copy[6] = static_cast<char>(Checkpoint::kVersion + 1);
      write(copy);
      CHECK_THROWS_AS(load_checkpoint(path), FormatError);
    }
    SUBCASE("empty") {
      write("");
      CHECK_THROWS_AS(load_checkpoint(path), FormatError);
    }
  }

  TEST_CASE("missing file") {
    CHECK_THROWS_AS(load_checkpoint(scratch("does_not_exist.qsvlm")), Error);
  }
}
