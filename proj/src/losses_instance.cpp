// Copyright 2026 The QSVLM Authors
// SPDX-License-Identifier: Apache-2.0

#include "qsvlm/losses_instance.hpp"


#include <cmath>

#include "qsvlm/errors.hpp"
#include "qsvlm/log.hpp"

namespace qsvlm {

torch::Tensor fuse(const torch::Tensor& v, const torch::Tensor& t) {
  require(v.sizes() == t.sizes(), "fuse: image and text features must have identical shapes");
  return v + t;
}

MatchHeadImpl::MatchHeadImpl(int64_t dim) {
  hidden = register_module("hidden", torch::nn::Linear(dim, dim));
  output = register_module("output", torch::nn::Linear(dim, 1));
}

torch::Tensor MatchHeadImpl::forward(const torch::Tensor& fused) {
  return output(torch::gelu(hidden(fused))).squeeze(-1);
}

HardNegatives sample_hard_negatives(const torch::Tensor& sim, std::mt19937_64& rng) {
  require(sim.dim() == 2 && sim.size(0) == sim.size(1), "sample_hard_negatives: expected a square matrix");
  const auto b = sim.size(0);
  require(b >= 2, "sample_hard_negatives: need B >= 2 for negatives to exist");
  auto s = sim.detach().to(torch::kCPU, torch::kFloat64).contiguous();
  auto a = s.accessor<double, 2>();

  // Softmax over the off-diagonal entries of one row or column.
  auto draw = [&](int64_t anchor, bool by_row) {
    std::vector<double> weights(static_cast<size_t>(b), 0.0);
    double peak = -std::numeric_limits<double>::infinity();
    for (int64_t k = 0; k < b; ++k) {
      if (k == anchor) continue;
      peak = std::max(peak, by_row ? a[anchor][k] : a[k][anchor]);
    }
    require(std::isfinite(peak), "sample_hard_negatives: non-finite similarities");
    for (int64_t k = 0; k < b; ++k) {
      if (k == anchor) continue;
      weights[static_cast<size_t>(k)] = std::exp((by_row ? a[anchor][k] : a[k][anchor]) - peak);
    }
    std::discrete_distribution<int64_t> dist(weights.begin(), weights.end());
    return dist(rng);
  };

  HardNegatives out;
  out.text_for_image.reserve(static_cast<size_t>(b));
  out.image_for_text.reserve(static_cast<size_t>(b));
  for (int64_t i = 0; i < b; ++i) out.text_for_image.push_back(draw(i, true));
  for (int64_t j = 0; j < b; ++j) out.image_for_text.push_back(draw(j, false));
  return out;
}

HardNegatives sample_hard_negatives(const torch::Tensor& sim, uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample_hard_negatives(sim, rng);
}

MatchBatch build_match_batch(const torch::Tensor& v, const torch::Tensor& t, const HardNegatives& negatives,
                             MatchHead& head) {
  require(v.dim() == 2 && v.sizes() == t.sizes(), "build_match_batch: v and t must both be [B, D]");
  const auto b = v.size(0);
  require(static_cast<int64_t>(negatives.text_for_image.size()) == b &&
              static_cast<int64_t>(negatives.image_for_text.size()) == b,
          "build_match_batch: negatives do not match batch size");
  auto neg_t = torch::tensor(negatives.text_for_image, torch::kInt64);
  auto neg_v = torch::tensor(negatives.image_for_text, torch::kInt64);

  // Row order: anchor-major triples (v_i + t_i, v_i + t_neg(i), v_neg(i) + t_i).
  auto positive = fuse(v, t);
  auto wrong_text = fuse(v, t.index_select(0, neg_t));
  auto wrong_image = fuse(v.index_select(0, neg_v), t);
  MatchBatch mb;
  mb.fused = torch::stack({positive, wrong_text, wrong_image}, 1).reshape({3 * b, v.size(1)});
  mb.labels = torch::tensor({1.0, 0.0, 0.0}, v.options()).repeat({b});
  mb.logits = head->forward(mb.fused);
  mb.probs = torch::sigmoid(mb.logits);
  return mb;
}

torch::Tensor instance_matching_loss(const torch::Tensor& probs, const torch::Tensor& labels) {
  require(probs.sizes() == labels.sizes(), "instance_matching_loss: probs and labels must match");
  require(probs.numel() >= 1, "instance_matching_loss: empty batch");
  constexpr double eps = kProbabilityEpsilon;
  const auto saturated = torch::logical_or(probs < eps, probs > 1.0 - eps).sum().item<int64_t>();
  if (saturated > 0) {
    log_debug("instance_matching_loss: clamped " + std::to_string(saturated) + " saturated probabilities");
  }
  auto x = probs.clamp(eps, 1.0 - eps);
  return -(labels * torch::log(x) + (1.0 - labels) * torch::log(1.0 - x)).mean();
}

}  // namespace qsvlm
