// Copyright 2026 The QSVLM Authors
// SPDX-License-Identifier: Apache-2.0

#include "qsvlm/losses_modality.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "qsvlm/errors.hpp"

namespace qsvlm {

std::vector<int64_t> MaskPlan::visible() const {
  std::vector<int64_t> out;
  out.reserve(static_cast<size_t>(total) - masked.size());
  size_t k = 0;
  for (int64_t i = 0; i < total; ++i) {
    if (k < masked.size() && masked[k] == i) {
      ++k;
    } else {
      out.push_back(i);
    }
  }
  return out;
}

int64_t masked_count(int64_t total, double ratio) {
  return static_cast<int64_t>(std::llround(ratio * static_cast<double>(total)));
}

MaskPlan make_mask(int64_t total, double ratio, uint64_t seed) {
  require(total >= 1, "make_mask: total must be >= 1");
  require(ratio > 0.0 && ratio < 1.0, "make_mask: ratio must lie in (0, 1)");
  const auto count = masked_count(total, ratio);
  require(count >= 1, "make_mask: ratio masks zero elements");

  MaskPlan plan;
  plan.ratio = ratio;
  plan.seed = seed;
  plan.total = total;
  std::vector<int64_t> all(static_cast<size_t>(total));
  std::iota(all.begin(), all.end(), int64_t{0});
  std::mt19937_64 rng(seed);
  // Selection sampling keeps the input order, so the result is sorted.
  std::sample(all.begin(), all.end(), std::back_inserter(plan.masked), count, rng);
  return plan;
}

MaskedDecoderImpl::MaskedDecoderImpl(const EncoderConfig& config, int64_t out_dim, int64_t depth)
    : patch_count_(config.patch_count()), width_(config.embed_dim / 2) {
  require(width_ % 4 == 0, "MaskedDecoder: embed_dim / 2 must be divisible by 4");
  const int64_t heads = width_ % config.heads == 0 ? config.heads : 1;
  embed_ = register_module("embed", torch::nn::Linear(config.embed_dim, width_));
  mask_token_ = register_parameter("mask_token", torch::zeros({width_}));
  pos_ = register_buffer("pos", sincos_2d(config.grid(), width_));
  blocks_ = register_module("blocks", torch::nn::ModuleList());
  for (int64_t i = 0; i < depth; ++i) blocks_->push_back(TransformerBlock(width_, heads));
  norm_ = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({width_})));
  head_ = register_module("head", torch::nn::Linear(width_, out_dim));
  torch::NoGradGuard no_grad;
  mask_token_.normal_(0.0, 0.02);
}

torch::Tensor MaskedDecoderImpl::forward(const torch::Tensor& visible_features, const torch::Tensor& visible,
                                         const torch::Tensor& masked) {
  const auto b = visible_features.size(0);
  require(visible.size(0) == b && masked.size(0) == b, "MaskedDecoder: batch sizes differ");
  require(visible.size(1) + masked.size(1) == patch_count_, "MaskedDecoder: visible + masked must cover every patch");
  auto x = embed_(visible_features);
  auto full = mask_token_.to(x.dtype()).view({1, 1, width_}).expand({b, patch_count_, width_}).clone();
  full = full.scatter(1, visible.unsqueeze(-1).expand({b, visible.size(1), width_}), x);
  full = full + pos_.to(x.dtype());
  for (const auto& block : *blocks_) full = block->as<TransformerBlock>()->forward(full);
  auto pred = head_(norm_(full));
  return pred.gather(1, masked.unsqueeze(-1).expand({b, masked.size(1), pred.size(2)}));
}

torch::Tensor stack_plans(const std::vector<MaskPlan>& plans, bool visible) {
  require(!plans.empty(), "stack_plans: no plans");
  std::vector<torch::Tensor> rows;
  rows.reserve(plans.size());
  const auto count = plans.front().masked.size();
  for (const auto& p : plans) {
    require(p.masked.size() == count && p.total == plans.front().total,
            "stack_plans: plans must share total and masked count");
    rows.push_back(torch::tensor(visible ? p.visible() : p.masked, torch::kInt64));
  }
  return torch::stack(rows);
}

torch::Tensor normalize_patch_targets(const torch::Tensor& targets) {
  auto mean = targets.mean(-1, /*keepdim=*/true);
  auto var = targets.var(-1, /*unbiased=*/false, /*keepdim=*/true);
  return (targets - mean) / torch::sqrt(var + 1e-6);
}

torch::Tensor reconstruction_mse(const torch::Tensor& predicted, const torch::Tensor& target) {
  require(predicted.sizes() == target.sizes(), "reconstruction_mse: prediction and target shapes differ");
  require(predicted.numel() >= 1, "reconstruction_mse: empty input");
  return (predicted - target).pow(2).mean();
}

torch::Tensor recon_targets(const torch::Tensor& images, const std::vector<MaskPlan>& plans, int64_t patch_size,
                            bool normalize) {
  require(static_cast<int64_t>(plans.size()) == images.size(0), "recon_targets: one mask plan per image");
  auto patches = patchify(images, patch_size);
  require(plans.front().total == patches.size(1), "recon_targets: mask plan does not match the patch grid");
  auto masked = stack_plans(plans, false);
  auto target = patches.gather(1, masked.unsqueeze(-1).expand({masked.size(0), masked.size(1), patches.size(2)}));
  return normalize ? normalize_patch_targets(target) : target;
}

torch::Tensor image_recon_loss(VisionEncoder& encoder, MaskedDecoder& decoder, const torch::Tensor& images,
                               const std::vector<MaskPlan>& plans, const ImageReconOptions& options) {
  const auto& cfg = encoder->config();
  require(static_cast<int64_t>(plans.size()) == images.size(0), "image_recon_loss: one mask plan per image");
  for (const auto& p : plans) {
    require(p.total == cfg.patch_count(), "image_recon_loss: mask plan does not match the patch grid");
  }
  auto visible = stack_plans(plans, true);
  auto masked = stack_plans(plans, false);
  auto features = encoder->encode_subset(images, visible);
  auto predicted = decoder->forward(features, visible, masked);

  torch::Tensor target;
  if (options.target == ReconTarget::kPixels) {
    target = recon_targets(images, plans, cfg.patch_size, options.normalize_targets);
  } else {
    torch::NoGradGuard no_grad;
    auto latent = encoder->forward(images).patches;
    target = latent.gather(1, masked.unsqueeze(-1).expand({masked.size(0), masked.size(1), latent.size(2)}));
    if (options.normalize_targets) target = normalize_patch_targets(target);
  }
  return reconstruction_mse(predicted, target);
}

MlmInputs corrupt_tokens(const TokenBatch& batch, const std::vector<MaskPlan>& plans, const MlmVocab& vocab,
                         std::mt19937_64& rng) {
  const auto b = batch.batch_size();
  const auto t = batch.length();
  require(static_cast<int64_t>(plans.size()) == b, "corrupt_tokens: one mask plan per report");
  require(vocab.first_content_id < vocab.vocab_size, "corrupt_tokens: no content tokens to sample");

  auto corrupted = batch.ids.clone();
  auto ids = corrupted.accessor<int64_t, 2>();
  auto valid = batch.valid.accessor<bool, 2>();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int64_t> random_token(vocab.first_content_id, vocab.vocab_size - 1);
  std::vector<int64_t> positions;
  std::vector<int64_t> targets;

  for (int64_t i = 0; i < b; ++i) {
    int64_t n = 0;
    while (n < t && valid[i][n]) ++n;
    const auto& plan = plans[static_cast<size_t>(i)];
    require(plan.total == n, "corrupt_tokens: mask plan does not match report length");
    for (auto k : plan.masked) {
      positions.push_back(i * t + k);
      targets.push_back(ids[i][k]);
      const double u = unit(rng);
      if (u < 0.8) {
        ids[i][k] = vocab.mask_id;
      } else if (u < 0.9) {
        ids[i][k] = random_token(rng);
      }  // else: keep the original token
    }
  }
  require(!positions.empty(), "mlm_loss: no masked positions");
  return {corrupted, torch::tensor(positions, torch::kInt64), torch::tensor(targets, torch::kInt64)};
}

torch::Tensor masked_token_cross_entropy(const torch::Tensor& logits, const torch::Tensor& targets) {
  require(logits.dim() == 2 && targets.dim() == 1 && logits.size(0) == targets.size(0),
          "masked_token_cross_entropy: expected logits [K, V] and targets [K]");
  require(logits.size(0) >= 1, "mlm_loss: no masked positions");
  auto log_probs = torch::log_softmax(logits, -1);
  return -log_probs.gather(1, targets.unsqueeze(1)).mean();
}

torch::Tensor mlm_loss(TextEncoder& encoder, torch::nn::Linear& head, const TokenBatch& batch,
                       const MlmInputs& inputs) {
  require(inputs.positions.numel() >= 1, "mlm_loss: no masked positions");
  auto features = encoder->encode_tokens(inputs.corrupted, batch);
  auto flat = features.reshape({-1, features.size(2)}).index_select(0, inputs.positions);
  return masked_token_cross_entropy(head(flat), inputs.targets);
}

torch::Tensor modality_loss(const torch::Tensor& image_loss, const torch::Tensor& text_loss) {
  require(torch::isfinite(image_loss).all().item<bool>() && torch::isfinite(text_loss).all().item<bool>(),
          "modality_loss: non-finite component");
  return image_loss + text_loss;
}

}  // namespace qsvlm
