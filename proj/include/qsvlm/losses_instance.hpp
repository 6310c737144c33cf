// Copyright 2026 The QSVLM Authors
// SPDX-License-Identifier: Apache-2.0
//
// Image-report matching: fused (summed) pair features classified by a small
// two-layer head, trained with binary cross-entropy against hard negatives.

#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <random>
#include <vector>

namespace qsvlm {

/// Elementwise v + t. Works on single vectors or matching batches.
torch::Tensor fuse(const torch::Tensor& v, const torch::Tensor& t);

class MatchHeadImpl : public torch::nn::Module {
 public:
  explicit MatchHeadImpl(int64_t dim);
  /// fused [M, D] -> logits [M]
  torch::Tensor forward(const torch::Tensor& fused);

  torch::nn::Linear hidden{nullptr};
  torch::nn::Linear output{nullptr};
};
TORCH_MODULE(MatchHead);

struct HardNegatives {
  std::vector<int64_t> text_for_image;  // row i -> negative report column j != i
  std::vector<int64_t> image_for_text;  // column j -> negative image row i != j
};

/// Draws one negative per row and one per column of `sim` with probability
/// proportional to exp(sim) over the off-diagonal entries. Throws for B < 2.
HardNegatives sample_hard_negatives(const torch::Tensor& sim, std::mt19937_64& rng);
HardNegatives sample_hard_negatives(const torch::Tensor& sim, uint64_t seed);

struct MatchBatch {
  torch::Tensor fused;   // [3B, D]
  torch::Tensor labels;  // [3B], 1 for the true pair, 0 otherwise
  torch::Tensor logits;  // [3B]
  torch::Tensor probs;   // [3B]
};

/// Lays out (positive, negative text, negative image) triples per anchor and
/// scores them with the head.
MatchBatch build_match_batch(const torch::Tensor& v, const torch::Tensor& t, const HardNegatives& negatives,
                             MatchHead& head);

inline constexpr double kProbabilityEpsilon = 1e-7;

/// Mean binary cross-entropy. Probabilities are clamped to [eps, 1 - eps].
torch::Tensor instance_matching_loss(const torch::Tensor& probs, const torch::Tensor& labels);

}  // namespace qsvlm
