// Copyright 2026 The QSVLM Authors
// SPDX-License-Identifier: Apache-2.0
//
// Toy vision and text towers. Both map into a shared embed_dim space and
// expose a global (pooled, unit-norm) embedding alongside fine-grained
// features: per-patch for images, per-sentence for reports.

#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <vector>

#include "qsvlm/transformer.hpp"

namespace qsvlm {

struct EncoderConfig {
  int64_t image_size = 64;
  int64_t patch_size = 8;
  int64_t embed_dim = 128;
  int64_t depth = 4;
  int64_t heads = 4;
  int64_t vocab_size = 32;
  int64_t max_tokens = 48;
  int64_t max_sentences = 6;
  // Vision attention radius in patches (Chebyshev distance); 0 attends globally.
  int64_t vision_window = 0;

  int64_t grid() const { return image_size / patch_size; }
  int64_t patch_count() const { return grid() * grid(); }
  int64_t patch_pixels() const { return patch_size * patch_size; }

  // Throws InvalidArgument on a config that cannot build an encoder.
  void validate() const;

  bool operator==(const EncoderConfig&) const = default;
};

struct VisionFeatures {
  torch::Tensor global;   // [B, D], unit rows
  torch::Tensor patches;  // [B, P, D], projected, not normalized
};

struct TextFeatures {
  torch::Tensor global;         // [B, D], unit rows
  torch::Tensor sentences;      // [B, S_max, D], unit rows where sentence_mask is set, zero elsewhere
  torch::Tensor sentence_mask;  // [B, S_max] bool
};

/// Half-open token range [begin, end) of one sentence.
struct Span {
  int64_t begin = 0;
  int64_t end = 0;
  int64_t size() const { return end - begin; }
  bool operator==(const Span&) const = default;
};

/// A tokenized report: ids plus the sentence partition.
struct TokenizedReport {
  std::vector<int64_t> ids;
  std::vector<Span> sentences;
  bool operator==(const TokenizedReport&) const = default;
};

/// Padded batch of reports ready for the text tower.
struct TokenBatch {
  torch::Tensor ids;        // [B, T] int64, PAD-filled
  torch::Tensor positions;  // [B, T] int64, position within the owning sentence
  torch::Tensor valid;      // [B, T] bool
  std::vector<std::vector<Span>> spans;

  int64_t batch_size() const { return ids.size(0); }
  int64_t length() const { return ids.size(1); }
};

/// Builds a padded batch. Validates ids against vocab_size, span ordering and
/// bounds, and the max_tokens / max_sentences limits.
TokenBatch make_token_batch(const std::vector<TokenizedReport>& reports, const EncoderConfig& config,
                            int64_t pad_id);

/// [B, 1, H, W] -> [B, P, patch_pixels], row-major patch order.
torch::Tensor patchify(const torch::Tensor& images, int64_t patch_size);
/// Inverse of patchify.
torch::Tensor unpatchify(const torch::Tensor& patches, int64_t patch_size);

class VisionEncoderImpl : public torch::nn::Module {
 public:
  explicit VisionEncoderImpl(const EncoderConfig& config);

  VisionFeatures forward(const torch::Tensor& images);

  /// Runs the block stack over a subset of patches and returns the normed,
  /// unprojected token features [B, N, D]. visible: [B, N] int64 patch indices.
  torch::Tensor encode_subset(const torch::Tensor& images, const torch::Tensor& visible);

  const EncoderConfig& config() const { return config_; }

 private:
  torch::Tensor embed(const torch::Tensor& images);
  torch::Tensor run_blocks(torch::Tensor x, const std::optional<torch::Tensor>& allowed);

  EncoderConfig config_;
  torch::nn::Linear patch_embed_{nullptr};
  torch::Tensor pos_;
  torch::Tensor window_;  // [N, N] bool, undefined when attention is global
  torch::nn::ModuleList blocks_{nullptr};
  torch::nn::LayerNorm norm_{nullptr};
  torch::nn::Linear proj_{nullptr};
};
TORCH_MODULE(VisionEncoder);

class TextEncoderImpl : public torch::nn::Module {
 public:
  explicit TextEncoderImpl(const EncoderConfig& config);

  TextFeatures forward(const TokenBatch& batch);

  /// Normed, unprojected token features [B, T, D]. `ids` may differ from
  /// batch.ids (masked-token input); positions and validity come from batch.
  torch::Tensor encode_tokens(const torch::Tensor& ids, const TokenBatch& batch);

  const EncoderConfig& config() const { return config_; }

 private:
  EncoderConfig config_;
  torch::nn::Embedding token_embed_{nullptr};
  torch::nn::Embedding pos_embed_{nullptr};
  torch::nn::ModuleList blocks_{nullptr};
  torch::nn::LayerNorm norm_{nullptr};
  torch::nn::Linear proj_{nullptr};
};
TORCH_MODULE(TextEncoder);

/// Row-wise L2 normalization over the last dimension.
torch::Tensor l2_normalize(const torch::Tensor& x);

/// Cosine similarity of two vectors. Throws InvalidArgument on a zero-norm
/// input or mismatched lengths.
double cosine_sim(const torch::Tensor& a, const torch::Tensor& b);

}  // namespace qsvlm
