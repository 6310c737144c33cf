// Copyright 2026 The QSVLM Authors
// SPDX-License-Identifier: Apache-2.0

#include "doctest.h"
#include "qsvlm/encoders.hpp"
#include "qsvlm/errors.hpp"
#include "qsvlm/synthetic.hpp"
#include "qsvlm/transformer.hpp"
#include "test_support.hpp"

using namespace qsvlm;
using namespace qsvlm::testing;

namespace {

EncoderConfig small_config() {
  EncoderConfig c;
  c.image_size = 32;
  c.patch_size = 8;
  c.embed_dim = 16;
  c.depth = 2;
  c.heads = 2;
  return c;
}

}  // namespace

TEST_SUITE("encoders") {
  TEST_CASE("vision patches and global shapes") {
    torch::manual_seed(0);
    VisionEncoder enc(small_config());
    auto f = enc->forward(torch::rand({1, 1, 32, 32}));
    CHECK(f.patches.sizes() == torch::IntArrayRef({1, 16, 16}));
    CHECK(f.global.sizes() == torch::IntArrayRef({1, 16}));
    CHECK(std::abs(norm(to_vec(f.global[0])) - 1.0) < 1e-5);
  }

  TEST_CASE("vision forward is deterministic") {
    torch::manual_seed(1);
    VisionEncoder enc(small_config());
    auto img = torch::zeros({2, 1, 32, 32});
    auto a = enc->forward(img);
    auto b = enc->forward(img);
    CHECK(torch::equal(a.patches, b.patches));
    CHECK(torch::equal(a.global, b.global));
  }

  TEST_CASE("changing one patch changes features at that patch") {
    torch::manual_seed(2);
    VisionEncoder enc(small_config());
    auto img = torch::rand({1, 1, 32, 32});
    auto other = img.clone();
    other.index_put_({0, 0, torch::indexing::Slice(8, 16), torch::indexing::Slice(16, 24)}, 0.9);
    auto a = enc->forward(img).patches[0];
    auto b = enc->forward(other).patches[0];
    const int64_t changed = 1 * 4 + 2;
    CHECK((a[changed] - b[changed]).abs().max().item<double>() > 1e-4);
  }

  TEST_CASE("vision rejects wrong shapes and out-of-range pixels") {
    VisionEncoder enc(small_config());
    CHECK_THROWS_AS(enc->forward(torch::rand({1, 1, 16, 16})), InvalidArgument);
    CHECK_THROWS_AS(enc->forward(torch::rand({1, 3, 32, 32})), InvalidArgument);
    CHECK_THROWS_AS(enc->forward(torch::rand({1, 1, 32, 32}) + 1.5), InvalidArgument);
    try {
      enc->forward(torch::rand({2, 1, 16, 16}));
    } catch (const InvalidArgument& e) {
      CHECK(std::string(e.what()).find("[2, 1, 16, 16]") != std::string::npos);
    }
  }

  TEST_CASE("patchify round trip and ordering") {
    auto img = torch::arange(64, torch::kFloat32).view({1, 1, 8, 8});
    auto p = patchify(img, 4);
    CHECK(p.sizes() == torch::IntArrayRef({1, 4, 16}));
    CHECK(p[0][1][0].item<float>() == 4.0f);  // top-right patch starts at column 4
    CHECK(p[0][2][0].item<float>() == 32.0f);
    CHECK(torch::equal(unpatchify(p, 4), img));
  }

  TEST_CASE("sentence pooling and mask") {
    torch::manual_seed(3);
    auto cfg = small_config();
    TextEncoder enc(cfg);
    auto one = make_token_batch({tokenize("there is a blob.")}, cfg, Vocabulary::kPad);
    auto f1 = enc->forward(one);
    CHECK(f1.sentence_mask[0].sum().item<int64_t>() == 1);
    CHECK(std::abs(norm(to_vec(f1.sentences[0][0])) - 1.0) < 1e-5);

    auto three = make_token_batch({tokenize("there is a blob. the lungs are clear. heart size is normal.")}, cfg,
                                  Vocabulary::kPad);
    auto f3 = enc->forward(three);
    CHECK(f3.sentence_mask[0].sum().item<int64_t>() == 3);
    CHECK(f3.sentences.sizes() == torch::IntArrayRef({1, cfg.max_sentences, cfg.embed_dim}));
    for (int s = 0; s < 3; ++s) CHECK(std::abs(norm(to_vec(f3.sentences[0][s])) - 1.0) < 1e-5);
    CHECK(f3.sentences[0][4].abs().sum().item<double>() == 0.0);
    CHECK(std::abs(norm(to_vec(f3.global[0])) - 1.0) < 1e-5);
  }

  TEST_CASE("sentence embedding is the normalized mean of its token features") {
    torch::manual_seed(4);
    auto cfg = small_config();
    TextEncoder enc(cfg);
    auto batch = make_token_batch({tokenize("there is a ring. the bones are intact.")}, cfg, Vocabulary::kPad);
    auto f = enc->forward(batch);
    auto params = enc->named_parameters();
    auto tokens = torch::nn::functional::linear(enc->encode_tokens(batch.ids, batch), params["proj.weight"],
                                                params["proj.bias"]);
    for (size_t s = 0; s < 2; ++s) {
      const auto span = batch.spans[0][s];
      Vec mean(static_cast<size_t>(cfg.embed_dim), 0.0);
      for (int64_t k = span.begin; k < span.end; ++k) {
        const auto row = to_vec(tokens[0][k]);
        for (size_t d = 0; d < mean.size(); ++d) mean[d] += row[d] / static_cast<double>(span.size());
      }
      const auto expected = normalized(mean);
      const auto got = to_vec(f.sentences[0][static_cast<int64_t>(s)]);
      for (size_t d = 0; d < got.size(); ++d) CHECK(got[d] == doctest::Approx(expected[d]).epsilon(1e-5));
    }
  }

  TEST_CASE("permuting sentences permutes sentence embeddings") {
    torch::manual_seed(5);
    auto cfg = small_config();
    TextEncoder enc(cfg);
    auto ab = make_token_batch({tokenize("there is a bar in the upper left. no pleural effusion is seen.")}, cfg,
                               Vocabulary::kPad);
    auto ba = make_token_batch({tokenize("no pleural effusion is seen. there is a bar in the upper left.")}, cfg,
                               Vocabulary::kPad);
    auto fa = enc->forward(ab);
    auto fb = enc->forward(ba);
    CHECK((fa.sentences[0][0] - fb.sentences[0][1]).abs().max().item<double>() < 1e-5);
    CHECK((fa.sentences[0][1] - fb.sentences[0][0]).abs().max().item<double>() < 1e-5);
    CHECK((fa.global - fb.global).abs().max().item<double>() < 1e-5);
  }

  TEST_CASE("padding does not leak into features") {
    torch::manual_seed(6);
    auto cfg = small_config();
    TextEncoder enc(cfg);
    const auto short_report = tokenize("there is a blob.");
    const auto long_report = tokenize("the lungs are clear. heart size is normal. no pleural effusion is seen.");
    auto alone = enc->forward(make_token_batch({short_report}, cfg, Vocabulary::kPad));
    auto padded = enc->forward(make_token_batch({short_report, long_report}, cfg, Vocabulary::kPad));
    CHECK((alone.global[0] - padded.global[0]).abs().max().item<double>() < 1e-5);
    CHECK((alone.sentences[0][0] - padded.sentences[0][0]).abs().max().item<double>() < 1e-5);
  }

  TEST_CASE("token batch validation") {
    auto cfg = small_config();
    auto good = tokenize("there is a blob.");
    auto bad_id = good;
    bad_id.ids[0] = cfg.vocab_size;
    CHECK_THROWS_AS(make_token_batch({bad_id}, cfg, 0), InvalidArgument);
    auto empty_span = good;
    empty_span.sentences = {{0, 0}, {0, 5}};
    CHECK_THROWS_AS(make_token_batch({empty_span}, cfg, 0), InvalidArgument);
    auto overlap = good;
    overlap.sentences = {{0, 3}, {2, 5}};
    CHECK_THROWS_AS(make_token_batch({overlap}, cfg, 0), InvalidArgument);
    auto beyond = good;
    beyond.sentences = {{0, 6}};
    CHECK_THROWS_AS(make_token_batch({beyond}, cfg, 0), InvalidArgument);
    auto small = cfg;
    small.max_tokens = 3;
    CHECK_THROWS_AS(make_token_batch({good}, small, 0), InvalidArgument);
  }

  TEST_CASE("shape invariants over random configs") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 6; ++trial) {
      EncoderConfig c;
      c.patch_size = std::array<int64_t, 3>{4, 8, 16}[rng() % 3];
      c.image_size = c.patch_size * static_cast<int64_t>(1 + rng() % 4);
      c.heads = std::array<int64_t, 2>{1, 2}[rng() % 2];
      c.embed_dim = 8 * static_cast<int64_t>(1 + rng() % 2);
      c.depth = 1;
      torch::manual_seed(trial);
      VisionEncoder v(c);
      TextEncoder t(c);
      const auto b = static_cast<int64_t>(1 + rng() % 3);
      auto vf = v->forward(torch::rand({b, 1, c.image_size, c.image_size}));
      CHECK(vf.patches.size(1) == c.patch_count());
      CHECK(vf.global.size(0) == b);
      const int sentences = static_cast<int>(1 + rng() % 3);
      std::string report;
      for (int s = 0; s < sentences; ++s) report += s ? " the lungs are clear." : "there is a cross.";
      auto tf = t->forward(make_token_batch({tokenize(report)}, c, 0));
      CHECK(tf.sentence_mask.sum().item<int64_t>() == sentences);
    }
  }

  TEST_CASE("encoder config validation") {
    EncoderConfig c;
    c.patch_size = 7;
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
    c = EncoderConfig{};
    c.heads = 3;
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
  }

  TEST_CASE("cosine similarity") {
    auto u = torch::tensor({0.3, -1.2, 2.0}, torch::kFloat64);
    CHECK(cosine_sim(u, u) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(cosine_sim(torch::tensor({1.0, 0.0}), torch::tensor({0.0, 1.0})) == doctest::Approx(0.0));
    auto a = randn({16}, 11);
    auto b = randn({16}, 12);
    CHECK(std::abs(cosine_sim(a, b) - cosine(to_vec(a), to_vec(b))) < 1e-7);
    CHECK_THROWS_AS(cosine_sim(torch::zeros({3}), u), InvalidArgument);
    CHECK_THROWS_AS(cosine_sim(u, torch::ones({4})), InvalidArgument);
  }

  TEST_CASE("l2_normalize keeps zero rows finite") {
    auto x = torch::zeros({2, 4}, torch::kFloat64).requires_grad_(true);
    auto y = l2_normalize(x);
    y.sum().backward();
    CHECK(torch::isfinite(y).all().item<bool>());
    CHECK(torch::isfinite(x.grad()).all().item<bool>());
  }

  TEST_CASE("sincos table") {
    auto t = sincos_2d(4, 8);
    CHECK(t.sizes() == torch::IntArrayRef({16, 8}));
    CHECK(t.abs().max().item<double>() <= 1.0 + 1e-6);
    // Distinct positions get distinct codes.
    CHECK((t[0] - t[5]).abs().sum().item<double>() > 0.1);
    CHECK_THROWS_AS(sincos_2d(4, 6), InvalidArgument);
  }
}
