// Copyright 2026 The QSVLM Authors
// SPDX-License-Identifier: Apache-2.0
//
// Pre-norm transformer block shared by the vision, text and decoder stacks.

#pragma once

#include <torch/torch.h>

#include <optional>

namespace qsvlm {

class TransformerBlockImpl : public torch::nn::Module {
 public:
  TransformerBlockImpl(int64_t dim, int64_t heads, int64_t mlp_ratio = 2);

  // x: [B, N, D]. key_valid: optional bool [B, N]; false keys are ignored by
  // attention. allowed: optional bool [N, N] or [B, N, N] query/key pattern.
  torch::Tensor forward(const torch::Tensor& x,
                        const std::optional<torch::Tensor>& key_valid = std::nullopt,
                        const std::optional<torch::Tensor>& allowed = std::nullopt);

 private:
  int64_t dim_;
  int64_t heads_;
  torch::nn::LayerNorm norm1_{nullptr}, norm2_{nullptr};
  torch::nn::Linear qkv_{nullptr}, out_{nullptr}, fc1_{nullptr}, fc2_{nullptr};
};
TORCH_MODULE(TransformerBlock);

/// Fixed 2-D sine/cosine position table for a grid x grid patch layout,
/// row-major patch order. Returns [grid*grid, dim]; dim must be divisible by 4.
torch::Tensor sincos_2d(int64_t grid, int64_t dim);

}  // namespace qsvlm
