// Copyright 2026 The QSVLM Authors
// SPDX-License-Identifier: Apache-2.0
//
// Global image <-> report contrastive alignment.

#pragma once

#include <torch/torch.h>

namespace qsvlm {

struct TemperatureParams {
  double tau1 = 0.07;    // global contrastive temperature
  double tau2 = 0.1;     // local matching / local contrastive temperature
  double tau_att = 0.1;  // sentence-conditioned attention over patches

  void validate() const;
  bool operator==(const TemperatureParams&) const = default;
};

enum class ContrastMode {
  kSymmetric,    // mean of image->text and text->image cross-entropies
  kImageToText,  // image-anchored rows only
};

/// Cross-entropy of a square score matrix against its diagonal. `logits[a][b]`
/// scores image a against report b; the result is the batch mean of
/// -log softmax over the anchor's row (and column, in symmetric mode).
torch::Tensor diagonal_info_nce(const torch::Tensor& logits, ContrastMode mode = ContrastMode::kSymmetric);

/// InfoNCE between global embeddings. v, t: [B, D] unit rows. Throws
/// InvalidArgument for B = 0, mismatched shapes or non-finite input.
torch::Tensor global_alignment_loss(const torch::Tensor& v, const torch::Tensor& t, double tau1,
                                    ContrastMode mode = ContrastMode::kSymmetric);

}  // namespace qsvlm
