// Copyright 2026 The QSVLM Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <numeric>

#include "doctest.h"
#include "qsvlm/errors.hpp"
#include "qsvlm/evaluation.hpp"
#include "test_support.hpp"

using namespace qsvlm;
using namespace qsvlm::testing;

namespace {

// Pair-counting AUC: P(score_pos > score_neg) + 0.5 P(tie).
double auc_oracle(const Vec& scores, const std::vector<int>& labels) {
  double wins = 0.0;
  double pairs = 0.0;
  for (size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      pairs += 1.0;
      if (scores[i] > scores[j]) wins += 1.0;
      if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

double cnr_oracle(const Vec& pixels, int size, const Box& box) {
  Vec in, out;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double v = pixels[static_cast<size_t>(y * size + x)];
      (x >= box.x0 && x < box.x1 && y >= box.y0 && y < box.y1 ? in : out).push_back(v);
    }
  }
  auto mean = [](const Vec& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); };
  auto var = [&](const Vec& v) {
    const double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size());
  };
  return (mean(in) - mean(out)) / std::sqrt((var(in) + var(out)) / 2.0);
}

// Heatmap with ones on the given (row, col) patches of a grid, zero elsewhere.
std::vector<double> hot_patches(int64_t grid, const std::vector<std::pair<int, int>>& cells) {
  std::vector<double> h(static_cast<size_t>(grid * grid), 0.0);
  for (auto [r, c] : cells) h[static_cast<size_t>(r * grid + c)] = 1.0;
  return h;
}

PretrainModel tiny_model(uint64_t seed) {
  EncoderConfig e;
  e.embed_dim = 16;
  e.depth = 1;
  e.heads = 2;
  torch::manual_seed(seed);
  return PretrainModel(ModelOptions{e, ReconTarget::kPixels, 1});
}

}  // namespace

TEST_SUITE("evaluation") {
  TEST_CASE("AUC matches pair counting and handles ties") {
    CHECK(roc_auc(std::vector<double>{0.5, 0.5}, std::vector<int>{0, 1}) == doctest::Approx(0.5));
    CHECK(roc_auc(std::vector<double>{0.1, 0.9}, std::vector<int>{0, 1}) == doctest::Approx(1.0));
    CHECK(roc_auc(std::vector<double>{0.9, 0.1}, std::vector<int>{0, 1}) == doctest::Approx(0.0));

    std::mt19937_64 rng(4);
    std::uniform_int_distribution<int> coarse(0, 5);
    for (int trial = 0; trial < 20; ++trial) {
      Vec scores(40);
      std::vector<int> labels(40);
      for (size_t i = 0; i < scores.size(); ++i) {
        scores[i] = coarse(rng) * 0.25;
        labels[i] = static_cast<int>(i % 3 == 0);
      }
      CHECK(std::abs(roc_auc(scores, labels) - auc_oracle(scores, labels)) < 1e-12);
    }
  }

  TEST_CASE("AUC is invariant under monotone transforms") {
    auto raw = to_vec(randn({60}, 9));
    std::vector<int> labels(raw.size());
    for (size_t i = 0; i < raw.size(); ++i) labels[i] = raw[i] + 0.3 * std::sin(static_cast<double>(i)) > 0 ? 1 : 0;
    Vec exp_scores, affine;
    for (double s : raw) {
      exp_scores.push_back(std::exp(s));
      affine.push_back(3.0 * s + 1.0);
    }
    const double base = roc_auc(raw, labels);
    CHECK(roc_auc(exp_scores, labels) == doctest::Approx(base).epsilon(1e-12));
    CHECK(roc_auc(affine, labels) == doctest::Approx(base).epsilon(1e-12));
  }

  TEST_CASE("AUC needs both classes") {
    CHECK_THROWS_AS(roc_auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), InvalidArgument);
  }

  TEST_CASE("classification metrics") {
    auto scores = torch::tensor({{0.9, 0.1, 0.0}, {0.2, 0.7, 0.1}, {0.3, 0.3, 0.3}, {0.1, 0.2, 0.6}});
    auto m = classification_metrics(scores, {0, 1, 1, 2});
    CHECK(m.predictions == std::vector<int>{0, 1, 0, 2});
    CHECK(m.accuracy == doctest::Approx(0.75));
    REQUIRE(m.per_class_auc.size() == 3);
    CHECK(m.per_class_auc[0] == doctest::Approx(1.0));

    auto absent = classification_metrics(scores, {0, 0, 1, 1});
    CHECK(std::isnan(absent.per_class_auc[2]));
    CHECK(std::isfinite(absent.macro_auc));
  }

  TEST_CASE("zero-shot with oracle and identical prompts") {
    auto prompts = torch::eye(4, torch::kFloat32);
    std::vector<int> labels;
    std::vector<torch::Tensor> rows;
    for (int i = 0; i < 40; ++i) {
      labels.push_back(i % 4);
      rows.push_back(prompts[i % 4]);
    }
    auto oracle = zero_shot_from_embeddings(torch::stack(rows), prompts, labels);
    CHECK(oracle.metrics.accuracy == 1.0);
    CHECK(oracle.metrics.macro_auc == doctest::Approx(1.0));

    auto same = l2_normalize(torch::ones({4, 4}));
    auto degenerate = zero_shot_from_embeddings(unit_rows({40, 4}, 3).to(torch::kFloat32), same, labels);
    CHECK(degenerate.metrics.accuracy == doctest::Approx(0.25));
    for (int p : degenerate.metrics.predictions) CHECK(p == 0);
  }

  TEST_CASE("zero-shot through a model") {
    auto model = tiny_model(1);
    auto samples = generate_corpus(16, CorpusConfig{}, 3);
    std::vector<int> labels;
    for (const auto& s : samples) labels.push_back(s.class_label);
    auto result = zero_shot_classify(model, stack_images(samples), labels, default_class_prompts());
    CHECK(result.scores.sizes() == torch::IntArrayRef({16, 4}));
    CHECK(torch::all(result.scores <= 1.0001).item<bool>());
    CHECK_THROWS_AS(zero_shot_classify(model, stack_images(samples), labels, {"there is a blob."}), InvalidArgument);
    CHECK_THROWS_AS(encode_prompts(model, {"there is a unicorn."}), InvalidArgument);
  }

  TEST_CASE("uniform heatmap selects nothing") {
    std::vector<double> flat(64, 0.3);
    auto region = threshold_region(flat, 8, 64, 1.0);
    CHECK(std::count(region.begin(), region.end(), 1) == 0);
    auto r = ground_from_heatmap(flat, 8, 64, Box{8, 8, 24, 24}, 1.0);
    CHECK(r.iou == 0.0);
    CHECK_FALSE(r.region_box.has_value());
    CHECK_FALSE(r.cnr.has_value());
  }

  TEST_CASE("indicator heatmap recovers an aligned box") {
    Box box{8, 16, 24, 32};
    auto h = hot_patches(8, {{2, 1}, {2, 2}, {3, 1}, {3, 2}});
    auto r = ground_from_heatmap(h, 8, 64, box, 1.0);
    CHECK(r.iou == doctest::Approx(1.0));
    REQUIRE(r.region_box.has_value());
    CHECK(*r.region_box == box);
  }

  TEST_CASE("two hot patches against an offset box") {
    // Region covers x in [8, 24), y in [8, 16).
    auto h = hot_patches(8, {{1, 1}, {1, 2}});
    Box region{8, 8, 24, 16};
    for (Box box : {Box{12, 4, 28, 20}, Box{0, 0, 10, 10}, Box{20, 12, 40, 40}, Box{40, 40, 50, 50}}) {
      const int ix = std::max(0, std::min(region.x1, box.x1) - std::max(region.x0, box.x0));
      const int iy = std::max(0, std::min(region.y1, box.y1) - std::max(region.y0, box.y0));
      const double inter = ix * iy;
      const double expected = inter / (static_cast<double>(region.area() + box.area()) - inter);
      CHECK(ground_from_heatmap(h, 8, 64, box, 1.0).iou == doctest::Approx(expected).epsilon(1e-12));
    }
    CHECK(ground_from_heatmap(h, 8, 64, Box{12, 4, 28, 20}, 1.0).iou == doctest::Approx(1.0 / 3.0));
  }

  TEST_CASE("mask IoU properties") {
    auto a = box_mask(Box{0, 0, 10, 10}, 32);
    auto b = box_mask(Box{5, 5, 20, 20}, 32);
    auto c = box_mask(Box{25, 25, 30, 30}, 32);
    std::vector<uint8_t> empty(32 * 32, 0);
    CHECK(mask_iou(a, a) == 1.0);
    CHECK(mask_iou(a, b) == mask_iou(b, a));
    CHECK(mask_iou(a, c) == 0.0);
    CHECK(mask_iou(empty, empty) == 0.0);
    CHECK(mask_iou(a, b) == doctest::Approx(25.0 / (100.0 + 225.0 - 25.0)));
    CHECK(*mask_bounds(b, 32) == Box{5, 5, 20, 20});
    CHECK_FALSE(mask_bounds(empty, 32).has_value());
  }

  TEST_CASE("upsampling and reshape are lossless") {
    auto h = to_vec(randn({16}, 5));
    auto up = upsample_heatmap(h, 4, 16);
    REQUIRE(up.size() == 256);
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) CHECK(up[static_cast<size_t>(y * 16 + x)] == h[static_cast<size_t>((y / 4) * 4 + x / 4)]);

    auto grid = torch::tensor(h, torch::kFloat64).view({4, 4});
    CHECK(to_vec(grid.flatten()) == h);
    auto r = ground_from_heatmap(h, 4, 16, Box{0, 0, 8, 8}, 1.0);
    CHECK(r.heatmap == h);
  }

  TEST_CASE("CNR closed form and errors") {
    // Inside: {0, 2, 0, 2} (mean 1, var 1). Outside: alternating -1, 1 (mean 0, var 1).
    Vec pixels(16);
    for (int y = 0; y < 4; ++y) {
      for (int x = 0; x < 4; ++x) {
        const bool inside = x < 2 && y < 2;
        const bool odd = (x + y) % 2 == 1;
        pixels[static_cast<size_t>(y * 4 + x)] = inside ? (odd ? 2.0 : 0.0) : (odd ? 1.0 : -1.0);
      }
    }
    CHECK(cnr(pixels, 4, Box{0, 0, 2, 2}) == doctest::Approx(1.0).epsilon(1e-12));

    Vec constant(16, 0.5);
    CHECK_THROWS_AS(cnr(constant, 4, Box{0, 0, 2, 2}), InvalidArgument);
    Vec step(16, 0.0);
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 2; ++x) step[static_cast<size_t>(y * 4 + x)] = 1.0;
    CHECK_THROWS_AS(cnr(step, 4, Box{0, 0, 2, 2}), InvalidArgument);
    CHECK_THROWS_AS(cnr(pixels, 4, Box{1, 1, 1, 3}), InvalidArgument);
    CHECK_THROWS_AS(cnr(pixels, 4, Box{0, 0, 4, 4}), InvalidArgument);
  }

  TEST_CASE("CNR matches the two-pass oracle") {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 20; ++trial) {
      auto pixels = to_vec(randn({24 * 24}, 100 + trial));
      std::uniform_int_distribution<int> lo(0, 15), len(2, 8);
      const int x0 = lo(rng), y0 = lo(rng);
      Box box{x0, y0, x0 + len(rng), y0 + len(rng)};
      CHECK(std::abs(cnr(pixels, 24, box) - cnr_oracle(pixels, 24, box)) < 1e-6);
    }
  }

  TEST_CASE("CNR flips sign when inside and outside swap") {
    auto pixels = to_vec(randn({8 * 8}, 21));
    for (size_t i = 0; i < 32; ++i) pixels[i] += 1.5;  // top half brighter
    Vec flipped(64);
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) flipped[static_cast<size_t>((7 - y) * 8 + x)] = pixels[static_cast<size_t>(y * 8 + x)];
    Box top{0, 0, 8, 4};
    const double a = cnr(pixels, 8, top);
    CHECK(a > 0.0);
    CHECK(cnr(flipped, 8, top) == doctest::Approx(-a).epsilon(1e-12));
  }

  TEST_CASE("mean IoU") {
    GroundingResult one, zero;
    one.iou = 1.0;
    zero.iou = 0.0;
    CHECK(miou({one}) == 1.0);
    CHECK(miou({zero, one}) == 0.5);
    CHECK_THROWS_AS(miou({}), InvalidArgument);

    std::vector<GroundingResult> many(37);
    double sum = 0.0;
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& r : many) {
      r.iou = u(rng);
      sum += r.iou;
    }
    CHECK(std::abs(miou(many) - sum / 37.0) < 1e-9);
  }

  TEST_CASE("grounding queries cover boxed sentences") {
    auto samples = generate_corpus(20, CorpusConfig{}, 6);
    auto all = grounding_queries(samples);
    size_t boxed = 0;
    for (const auto& s : samples)
      for (size_t i = 0; i < s.sentences.size(); ++i) boxed += s.sentence_box(i).has_value();
    CHECK(all.size() == boxed);
    for (const auto& q : all) CHECK(samples[q.sample].sentence_box(q.sentence).has_value());
    CHECK(grounding_queries(samples, 3).size() == 3);
  }

  TEST_CASE("model heatmaps in both modes") {
    auto model = tiny_model(2);
    auto samples = generate_corpus(4, CorpusConfig{}, 7);
    const auto& s = samples[0];
    for (auto mode : {HeatmapMode::kCosine, HeatmapMode::kAttention}) {
      GroundingOptions opts;
      opts.mode = mode;
      auto h = sentence_heatmap(model, s.image(), s.sentences[0].text, opts);
      REQUIRE(h.size() == 64);
      for (double v : h) CHECK(std::isfinite(v));
      if (mode == HeatmapMode::kAttention) {
        CHECK(std::accumulate(h.begin(), h.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-5));
      } else {
        for (double v : h) CHECK(std::abs(v) <= 1.0 + 1e-5);
      }
    }
    auto summary = evaluate_grounding(model, samples);
    CHECK(summary.queries == static_cast<int64_t>(grounding_queries(samples).size()));
    for (const auto& r : summary.results) CHECK((r.iou >= 0.0 && r.iou <= 1.0));
  }

  TEST_CASE("linear probe on separable and shuffled labels") {
    const int n = 400;
    std::vector<int> labels(n);
    for (int i = 0; i < n; ++i) labels[i] = i % 4;
    auto separable = torch::zeros({n, 8}, torch::kFloat64);
    for (int i = 0; i < n; ++i) separable[i][labels[i]] = 1.0;
    separable = separable + 0.05 * randn({n, 8}, 1);
    CHECK(linear_probe(separable, labels, separable, labels, 1.0) == doctest::Approx(1.0));

    auto noise = randn({n, 8}, 2);
    auto test_noise = randn({n, 8}, 3);
    std::vector<int> shuffled = labels;
    std::shuffle(shuffled.begin(), shuffled.end(), std::mt19937_64(5));
    const double auc = linear_probe(noise, shuffled, test_noise, labels, 1.0);
    const double sigma = std::sqrt((100.0 + 300.0 + 1.0) / (12.0 * 100.0 * 300.0));
    CHECK(std::abs(auc - 0.5) < 3.0 * sigma);

    CHECK_THROWS_AS(linear_probe(noise, labels, test_noise, labels, 0.005), InvalidArgument);
  }

  TEST_CASE("probe subset is reproducible") {
    auto feats = randn({200, 6}, 11);
    std::vector<int> labels(200);
    for (int i = 0; i < 200; ++i) labels[i] = (i * 7) % 4;
    ProbeOptions opts;
    opts.iterations = 50;
    CHECK(linear_probe(feats, labels, feats, labels, 0.3, opts) == linear_probe(feats, labels, feats, labels, 0.3, opts));
  }

  TEST_CASE("mean table skips failed cells") {
    AblationTable a, b;
    a.seed = 1;
    b.seed = 2;
    for (const auto& t : ablation_toggles()) {
      a.rows.push_back({t, 0.6, 0.7, 0.5, ""});
      b.rows.push_back({t, 0.8, 0.9, 0.7, ""});
    }
    b.rows[2] = {b.rows[2].scales, std::nullopt, std::nullopt, std::nullopt, "diverged"};
    auto mean = mean_table({a, b});
    REQUIRE(mean.rows.size() == 7);
    CHECK_FALSE(mean.seed.has_value());
    CHECK(*mean.rows[0].probe_auc == doctest::Approx(0.7));
    CHECK(*mean.rows[0].zero_shot_auc == doctest::Approx(0.8));
    CHECK(*mean.rows[2].probe_auc == doctest::Approx(0.6));
    CHECK(mean.rows[2].failure.find("diverged") != std::string::npos);
    auto text = format_table(mean);
    CHECK(text.find("mean over seeds") != std::string::npos);
    CHECK(text.find("FAILED: seed 2: diverged") != std::string::npos);
    CHECK_THROWS_AS(mean_table({}), InvalidArgument);
  }

  TEST_CASE("ablation has seven rows and is deterministic") {
    TrainConfig cfg;
    cfg.encoder.embed_dim = 16;
    cfg.encoder.depth = 1;
    cfg.encoder.heads = 2;
    cfg.decoder_depth = 1;
    cfg.batch_size = 4;
    cfg.steps = 2;
    auto train_set = generate_corpus(40, CorpusConfig{}, 1);
    auto held_out = generate_corpus(20, CorpusConfig{}, 2);
    EvalConfig eval;
    eval.ablation_probe_fraction = 0.5;
    eval.probe.iterations = 20;
    auto a = run_ablation(cfg, train_set, held_out, eval);
    auto b = run_ablation(cfg, train_set, held_out, eval);
    REQUIRE(a.rows.size() == 7);
    CHECK(format_table(a) == format_table(b));
    for (const auto& r : a.rows) {
      CHECK(r.failure.empty());
      CHECK(r.zero_shot_auc.has_value());
    }
  }

  TEST_CASE("ablation rows fail independently") {
    TrainConfig cfg;
    cfg.encoder.embed_dim = 16;
    cfg.encoder.depth = 1;
    cfg.encoder.heads = 2;
    cfg.decoder_depth = 1;
    cfg.batch_size = 4;
    cfg.steps = 1;
    auto train_set = generate_corpus(12, CorpusConfig{}, 1);
    auto held_out = generate_corpus(8, CorpusConfig{}, 2);
    EvalConfig eval;
    eval.ablation_probe_fraction = 0.01;  // fewer rows than classes
    auto t = run_ablation(cfg, train_set, held_out, eval);
    REQUIRE(t.rows.size() == 7);
    for (const auto& r : t.rows) CHECK_FALSE(r.failure.empty());
  }
}
