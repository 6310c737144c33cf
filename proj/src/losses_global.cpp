// Copyright 2026 The QSVLM Authors
// SPDX-License-Identifier: Apache-2.0

#include "qsvlm/losses_global.hpp"

#include "qsvlm/errors.hpp"

namespace qsvlm {

void TemperatureParams::validate() const {
  require(tau1 > 0.0 && tau2 > 0.0 && tau_att > 0.0, "TemperatureParams: temperatures must be positive");
}

torch::Tensor diagonal_info_nce(const torch::Tensor& logits, ContrastMode mode) {
  require(logits.dim() == 2 && logits.size(0) == logits.size(1), "info_nce: expected a square score matrix");
  require(logits.size(0) >= 1, "info_nce: empty batch");
  require(torch::isfinite(logits).all().item<bool>(), "info_nce: non-finite scores");
  // logsumexp subtracts the row max before exponentiating.
  auto diag = logits.diagonal();
  auto row_loss = (torch::logsumexp(logits, 1) - diag).mean();
  if (mode == ContrastMode::kImageToText) return row_loss;
  auto col_loss = (torch::logsumexp(logits, 0) - diag).mean();
  return 0.5 * (row_loss + col_loss);
}

torch::Tensor global_alignment_loss(const torch::Tensor& v, const torch::Tensor& t, double tau1,
                                    ContrastMode mode) {
  require(v.dim() == 2 && t.dim() == 2 && v.sizes() == t.sizes(),
          "global_alignment_loss: v and t must both be [B, D]");
  require(v.size(0) >= 1, "global_alignment_loss: empty batch");
  require(tau1 > 0.0, "global_alignment_loss: tau1 must be positive");
  require(torch::isfinite(v).all().item<bool>() && torch::isfinite(t).all().item<bool>(),
          "global_alignment_loss: non-finite embeddings");
  return diagonal_info_nce(torch::matmul(v, t.t()) / tau1, mode);
}

}  // namespace qsvlm
