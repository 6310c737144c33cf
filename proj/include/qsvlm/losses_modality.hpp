// Copyright 2026 The QSVLM Authors
// SPDX-License-Identifier: Apache-2.0
//
// Single-modality self-supervision: masked patch reconstruction for images
// and masked-token prediction for reports.

#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <random>
#include <vector>

#include "qsvlm/encoders.hpp"

namespace qsvlm {

struct MaskPlan {
  std::vector<int64_t> masked;  // sorted, unique
  double ratio = 0.0;
  uint64_t seed = 0;
  int64_t total = 0;

  /// Complement of `masked`, sorted.
  std::vector<int64_t> visible() const;
};

/// Number of elements a plan of this ratio masks: round(ratio * total).
int64_t masked_count(int64_t total, double ratio);

/// Uniform subset of round(ratio * total) indices drawn without replacement.
/// Requires 0 < ratio < 1, total >= 1 and a non-empty result.
MaskPlan make_mask(int64_t total, double ratio, uint64_t seed);

enum class ReconTarget {
  kPixels,  // raw patch pixels (optionally normalized per patch)
  kLatent,  // detached encoder features of the unmasked image
};

/// Lightweight decoder for masked patches: visible features are projected to
/// half width, mask tokens fill the hidden slots, and a short block stack
/// predicts each masked patch.
class MaskedDecoderImpl : public torch::nn::Module {
 public:
  MaskedDecoderImpl(const EncoderConfig& config, int64_t out_dim, int64_t depth = 2);

  /// visible_features [B, Nv, D]; visible / masked: [B, Nv] / [B, Nm] patch
  /// indices. Returns predictions [B, Nm, out_dim].
  torch::Tensor forward(const torch::Tensor& visible_features, const torch::Tensor& visible,
                        const torch::Tensor& masked);

 private:
  int64_t patch_count_;
  int64_t width_;
  torch::nn::Linear embed_{nullptr};
  torch::Tensor mask_token_;
  torch::Tensor pos_;
  torch::nn::ModuleList blocks_{nullptr};
  torch::nn::LayerNorm norm_{nullptr};
  torch::nn::Linear head_{nullptr};
};
TORCH_MODULE(MaskedDecoder);

/// Stacks per-sample plans into a [B, N] index tensor; all plans must share a
/// masked count. With `visible` set, stacks the complements instead.
torch::Tensor stack_plans(const std::vector<MaskPlan>& plans, bool visible);

/// Per-patch standardization of reconstruction targets (last dimension).
torch::Tensor normalize_patch_targets(const torch::Tensor& targets);

/// Mean squared error over every element.
torch::Tensor reconstruction_mse(const torch::Tensor& predicted, const torch::Tensor& target);

struct ImageReconOptions {
  bool normalize_targets = true;
  ReconTarget target = ReconTarget::kPixels;
};

/// Ground-truth values for the masked patches [B, Nm, Cp]; depends only on
/// pixels inside masked patches (pixel mode).
torch::Tensor recon_targets(const torch::Tensor& images, const std::vector<MaskPlan>& plans, int64_t patch_size,
                            bool normalize);

/// Masked-patch reconstruction loss. The encoder sees only visible patches;
/// the loss covers masked patches only.
torch::Tensor image_recon_loss(VisionEncoder& encoder, MaskedDecoder& decoder, const torch::Tensor& images,
                               const std::vector<MaskPlan>& plans, const ImageReconOptions& options = {});

/// Token ids used by masked-token corruption.
struct MlmVocab {
  int64_t mask_id = 1;
  int64_t first_content_id = 5;  // random replacements are drawn from [first_content_id, vocab_size)
  int64_t vocab_size = 0;
};

struct MlmInputs {
  torch::Tensor corrupted;  // [B, T] ids fed to the encoder
  torch::Tensor positions;  // [K] flat indices b * T + t of masked tokens
  torch::Tensor targets;    // [K] original ids at those positions
};

/// Applies the 80/10/10 rule at each plan's positions (plans index the valid
/// tokens of each report). Throws if no position is masked.
MlmInputs corrupt_tokens(const TokenBatch& batch, const std::vector<MaskPlan>& plans, const MlmVocab& vocab,
                         std::mt19937_64& rng);

/// Mean cross-entropy of logits [K, V] against targets [K].
torch::Tensor masked_token_cross_entropy(const torch::Tensor& logits, const torch::Tensor& targets);

torch::Tensor mlm_loss(TextEncoder& encoder, torch::nn::Linear& head, const TokenBatch& batch,
                       const MlmInputs& inputs);

/// L_m = image term + text term.
torch::Tensor modality_loss(const torch::Tensor& image_loss, const torch::Tensor& text_loss);

}  // namespace qsvlm
