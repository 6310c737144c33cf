// Copyright 2026 The QSVLM Authors
// SPDX-License-Identifier: Apache-2.0

#include "qsvlm/transformer.hpp"

#include <cmath>

#include "qsvlm/errors.hpp"

namespace qsvlm {

TransformerBlockImpl::TransformerBlockImpl(int64_t dim, int64_t heads, int64_t mlp_ratio)
    : dim_(dim), heads_(heads) {
  require(heads > 0 && dim % heads == 0, "TransformerBlock: dim must be divisible by heads");
  norm1_ = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  norm2_ = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  qkv_ = register_module("qkv", torch::nn::Linear(dim, 3 * dim));
  out_ = register_module("out", torch::nn::Linear(dim, dim));
  fc1_ = register_module("fc1", torch::nn::Linear(dim, mlp_ratio * dim));
  fc2_ = register_module("fc2", torch::nn::Linear(mlp_ratio * dim, dim));
}

torch::Tensor TransformerBlockImpl::forward(const torch::Tensor& x,
                                            const std::optional<torch::Tensor>& key_valid,
                                            const std::optional<torch::Tensor>& allowed) {
  const auto b = x.size(0);
  const auto n = x.size(1);
  const auto head_dim = dim_ / heads_;

  auto qkv = qkv_(norm1_(x)).view({b, n, 3, heads_, head_dim}).permute({2, 0, 3, 1, 4});
  auto scores = torch::matmul(qkv[0], qkv[1].transpose(-1, -2)) /
                std::sqrt(static_cast<double>(head_dim));
  if (key_valid) {
    auto blocked = key_valid->logical_not().view({b, 1, 1, n});
    scores = scores.masked_fill(blocked, -std::numeric_limits<double>::infinity());
  }
  if (allowed) {
    auto blocked = allowed->logical_not();
    blocked = blocked.dim() == 2 ? blocked.view({1, 1, n, n}) : blocked.view({b, 1, n, n});
    scores = scores.masked_fill(blocked, -std::numeric_limits<double>::infinity());
  }
  auto attn = torch::softmax(scores, -1);
  auto mixed = torch::matmul(attn, qkv[2]).transpose(1, 2).reshape({b, n, dim_});
  auto h = x + out_(mixed);
  return h + fc2_(torch::gelu(fc1_(norm2_(h))));
}

torch::Tensor sincos_2d(int64_t grid, int64_t dim) {
  require(dim % 4 == 0, "sincos_2d: dim must be divisible by 4");
  const int64_t quarter = dim / 4;
  auto omega = torch::arange(quarter, torch::kFloat64) / static_cast<double>(quarter);
  omega = 1.0 / torch::pow(10000.0, omega);
  auto coords = torch::arange(grid, torch::kFloat64);
  auto rows = coords.repeat_interleave(grid);  // patch index = row * grid + col
  auto cols = coords.repeat({grid});
  auto enc = [&](const torch::Tensor& pos) {
    auto angles = torch::outer(pos, omega);
    return torch::cat({torch::sin(angles), torch::cos(angles)}, 1);
  };
  return torch::cat({enc(rows), enc(cols)}, 1).to(torch::kFloat32);
}

}  // namespace qsvlm
