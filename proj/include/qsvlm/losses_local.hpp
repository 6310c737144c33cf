// Copyright 2026 The QSVLM Authors
// SPDX-License-Identifier: Apache-2.0
//
// Sentence <-> region alignment. Each sentence attends over the image patches
// to build a context vector c_i; the per-pair matching score Z smooth-maxes
// the sentence/context cosines, and the local loss contrasts Z across the
// batch.

#pragma once

#include <torch/torch.h>

#include <optional>

#include "qsvlm/losses_global.hpp"

namespace qsvlm {

struct AttentionContext {
  torch::Tensor context;  // [D], unit norm
  torch::Tensor weights;  // [P], non-negative, sums to 1
};

struct LocalMatch {
  torch::Tensor contexts;  // [S, D]
  torch::Tensor attn;      // [S, P]
  torch::Tensor z;         // scalar
};

/// Attention of one sentence over the patches of one image. Weights are a
/// softmax of patch/sentence cosines divided by tau_att; the context is the
/// L2-normalized weighted sum of the raw patch features.
AttentionContext attention_context(const torch::Tensor& patches, const torch::Tensor& sentence, double tau_att);

/// Matching score of one image/report pair:
///   Z = tau2 * log sum_i exp(<c_i, t_i> / tau2)
/// over the valid sentence rows. sentence_mask: optional bool [S].
LocalMatch local_match(const torch::Tensor& patches, const torch::Tensor& sentences, double tau2,
                       double tau_att, const std::optional<torch::Tensor>& sentence_mask = std::nullopt);

torch::Tensor local_matching_z(const torch::Tensor& patches, const torch::Tensor& sentences, double tau2,
                               double tau_att,
                               const std::optional<torch::Tensor>& sentence_mask = std::nullopt);

/// Z for every (image a, report b) pair. patches [Bv, P, D], sentences
/// [Bt, S, D] unit rows, sentence_mask [Bt, S]. Returns [Bv, Bt].
/// attn_out, when given, receives the attention weights [Bv, Bt, S, P].
torch::Tensor pairwise_matching_z(const torch::Tensor& patches, const torch::Tensor& sentences,
                                  const torch::Tensor& sentence_mask, double tau2, double tau_att,
                                  torch::Tensor* attn_out = nullptr);

/// Contrastive loss over the B x B matrix of Z / tau2 with matched pairs on
/// the diagonal. Throws InvalidArgument if a report has no valid sentence.
torch::Tensor local_alignment_loss(const torch::Tensor& patches, const torch::Tensor& sentences,
                                   const torch::Tensor& sentence_mask, const TemperatureParams& temps,
                                   ContrastMode mode = ContrastMode::kSymmetric);

}  // namespace qsvlm
