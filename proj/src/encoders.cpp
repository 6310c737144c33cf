// Copyright 2026 The QSVLM Authors
// SPDX-License-Identifier: Apache-2.0

#include "qsvlm/encoders.hpp"

#include <sstream>

#include "qsvlm/errors.hpp"

namespace qsvlm {

void EncoderConfig::validate() const {
  require(image_size > 0 && patch_size > 0, "EncoderConfig: image_size and patch_size must be positive");
  require(image_size % patch_size == 0, "EncoderConfig: image_size must be divisible by patch_size");
  require(embed_dim > 0 && heads > 0 && embed_dim % heads == 0,
          "EncoderConfig: embed_dim must be divisible by heads");
  require(embed_dim % 4 == 0, "EncoderConfig: embed_dim must be divisible by 4 (2-D sincos table)");
  require(depth >= 1, "EncoderConfig: depth must be >= 1");
  require(vocab_size >= 2, "EncoderConfig: vocab_size must be >= 2");
  require(max_tokens >= 1 && max_sentences >= 1, "EncoderConfig: max_tokens and max_sentences must be >= 1");
  require(vision_window >= 0, "EncoderConfig: vision_window must be >= 0");
}

torch::Tensor l2_normalize(const torch::Tensor& x) {
  // The epsilon keeps all-zero rows (padded sentence slots) finite in both
  // directions.
  return x * torch::rsqrt(x.pow(2).sum(-1, /*keepdim=*/true) + 1e-24);
}

double cosine_sim(const torch::Tensor& a, const torch::Tensor& b) {
  require(a.dim() == 1 && b.dim() == 1 && a.size(0) == b.size(0),
          "cosine_sim: expected two vectors of equal length");
  auto ad = a.to(torch::kFloat64);
  auto bd = b.to(torch::kFloat64);
  const double na = ad.norm().item<double>();
  const double nb = bd.norm().item<double>();
  require(na > 0.0 && nb > 0.0, "cosine_sim: zero-norm input");
  return ad.dot(bd).item<double>() / (na * nb);
}

torch::Tensor patchify(const torch::Tensor& images, int64_t patch_size) {
  const auto b = images.size(0);
  const auto h = images.size(2);
  const auto g = h / patch_size;
  return images.reshape({b, g, patch_size, g, patch_size})
      .permute({0, 1, 3, 2, 4})
      .reshape({b, g * g, patch_size * patch_size});
}

torch::Tensor unpatchify(const torch::Tensor& patches, int64_t patch_size) {
  const auto b = patches.size(0);
  const auto g = static_cast<int64_t>(std::llround(std::sqrt(static_cast<double>(patches.size(1)))));
  return patches.reshape({b, g, g, patch_size, patch_size})
      .permute({0, 1, 3, 2, 4})
      .reshape({b, 1, g * patch_size, g * patch_size});
}

TokenBatch make_token_batch(const std::vector<TokenizedReport>& reports, const EncoderConfig& config,
                            int64_t pad_id) {
  require(!reports.empty(), "make_token_batch: empty batch");
  int64_t length = 0;
  for (const auto& r : reports) length = std::max<int64_t>(length, static_cast<int64_t>(r.ids.size()));
  require(length >= 1, "make_token_batch: empty report");
  require(length <= config.max_tokens, "make_token_batch: report longer than max_tokens");

  const auto b = static_cast<int64_t>(reports.size());
  TokenBatch batch;
  batch.ids = torch::full({b, length}, pad_id, torch::kInt64);
  batch.positions = torch::zeros({b, length}, torch::kInt64);
  batch.valid = torch::zeros({b, length}, torch::kBool);
  auto ids = batch.ids.accessor<int64_t, 2>();
  auto pos = batch.positions.accessor<int64_t, 2>();
  auto valid = batch.valid.accessor<bool, 2>();

  for (int64_t i = 0; i < b; ++i) {
    const auto& r = reports[static_cast<size_t>(i)];
    const auto n = static_cast<int64_t>(r.ids.size());
    require(n >= 1, "make_token_batch: empty report");
    require(!r.sentences.empty(), "make_token_batch: report without sentences");
    require(static_cast<int64_t>(r.sentences.size()) <= config.max_sentences,
            "make_token_batch: more sentences than max_sentences");
    for (int64_t t = 0; t < n; ++t) {
      const auto id = r.ids[static_cast<size_t>(t)];
      require(id >= 0 && id < config.vocab_size, "make_token_batch: token id outside vocabulary");
      ids[i][t] = id;
      valid[i][t] = true;
    }
    int64_t prev_end = 0;
    for (const auto& s : r.sentences) {
      if (s.size() <= 0) throw InvalidArgument("make_token_batch: empty sentence span");
      if (s.begin < prev_end || s.end > n) {
        std::ostringstream os;
        os << "make_token_batch: sentence span [" << s.begin << ", " << s.end
           << ") overlaps, is unsorted, or exceeds report length " << n;
        throw InvalidArgument(os.str());
      }
      for (int64_t t = s.begin; t < s.end; ++t) pos[i][t] = t - s.begin;
      prev_end = s.end;
    }
    batch.spans.push_back(r.sentences);
  }
  return batch;
}

namespace {

std::string shape_str(const torch::Tensor& t) {
  std::ostringstream os;
  os << t.sizes();
  return os.str();
}

}  // namespace

VisionEncoderImpl::VisionEncoderImpl(const EncoderConfig& config) : config_(config) {
  config_.validate();
  const auto d = config_.embed_dim;
  patch_embed_ = register_module("patch_embed", torch::nn::Linear(config_.patch_pixels(), d));
  pos_ = register_buffer("pos", sincos_2d(config_.grid(), d));
  if (config_.vision_window > 0) {
    auto cells = torch::arange(config_.patch_count(), torch::kInt64);
    auto rows = cells.div(config_.grid(), "floor");
    auto cols = cells.remainder(config_.grid());
    auto dist = torch::maximum((rows.unsqueeze(1) - rows.unsqueeze(0)).abs(),
                               (cols.unsqueeze(1) - cols.unsqueeze(0)).abs());
    window_ = dist <= config_.vision_window;
  }
  blocks_ = register_module("blocks", torch::nn::ModuleList());
  for (int64_t i = 0; i < config_.depth; ++i) blocks_->push_back(TransformerBlock(d, config_.heads));
  norm_ = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d})));
  proj_ = register_module("proj", torch::nn::Linear(d, d));
}

torch::Tensor VisionEncoderImpl::embed(const torch::Tensor& images) {
  const auto s = config_.image_size;
  if (images.dim() != 4 || images.size(1) != 1 || images.size(2) != s || images.size(3) != s) {
    std::ostringstream os;
    os << "vision_forward: expected images [B, 1, " << s << ", " << s << "], got " << shape_str(images);
    throw InvalidArgument(os.str());
  }
  require(images.size(0) >= 1, "vision_forward: empty batch");
  require(images.min().item<double>() >= 0.0 && images.max().item<double>() <= 1.0,
          "vision_forward: pixel values must lie in [0, 1]");
  auto x = patchify(images, config_.patch_size);
  return patch_embed_(x) + pos_.to(x.dtype());
}

torch::Tensor VisionEncoderImpl::run_blocks(torch::Tensor x, const std::optional<torch::Tensor>& allowed) {
  for (const auto& block : *blocks_) x = block->as<TransformerBlock>()->forward(x, std::nullopt, allowed);
  return norm_(x);
}

VisionFeatures VisionEncoderImpl::forward(const torch::Tensor& images) {
  std::optional<torch::Tensor> allowed;
  if (window_.defined()) allowed = window_;
  auto patches = proj_(run_blocks(embed(images), allowed));
  return {l2_normalize(patches.mean(1)), patches};
}

torch::Tensor VisionEncoderImpl::encode_subset(const torch::Tensor& images, const torch::Tensor& visible) {
  auto tokens = embed(images);
  require(visible.dim() == 2 && visible.size(0) == tokens.size(0), "encode_subset: visible must be [B, N]");
  auto index = visible.unsqueeze(-1).expand({visible.size(0), visible.size(1), tokens.size(2)});
  std::optional<torch::Tensor> allowed;
  if (window_.defined()) {
    // Per-sample sub-pattern over the visible patches.
    auto rows = window_.index({visible});  // [B, n, N]
    allowed = rows.gather(2, visible.unsqueeze(1).expand({visible.size(0), visible.size(1), visible.size(1)}));
  }
  return run_blocks(tokens.gather(1, index), allowed);
}

TextEncoderImpl::TextEncoderImpl(const EncoderConfig& config) : config_(config) {
  config_.validate();
  const auto d = config_.embed_dim;
  token_embed_ = register_module("token_embed", torch::nn::Embedding(config_.vocab_size, d));
  pos_embed_ = register_module("pos_embed", torch::nn::Embedding(config_.max_tokens, d));
  blocks_ = register_module("blocks", torch::nn::ModuleList());
  for (int64_t i = 0; i < config_.depth; ++i) blocks_->push_back(TransformerBlock(d, config_.heads));
  norm_ = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d})));
  proj_ = register_module("proj", torch::nn::Linear(d, d));
}

torch::Tensor TextEncoderImpl::encode_tokens(const torch::Tensor& ids, const TokenBatch& batch) {
  require(ids.sizes() == batch.ids.sizes(), "text_forward: ids shape does not match batch");
  auto x = token_embed_(ids) + pos_embed_(batch.positions);
  for (const auto& block : *blocks_) x = block->as<TransformerBlock>()->forward(x, batch.valid);
  return norm_(x);
}

TextFeatures TextEncoderImpl::forward(const TokenBatch& batch) {
  const auto b = batch.batch_size();
  const auto t = batch.length();
  const auto s_max = config_.max_sentences;
  auto tokens = proj_(encode_tokens(batch.ids, batch));

  auto pool = torch::zeros({b, s_max, t}, tokens.options());
  auto mask = torch::zeros({b, s_max}, torch::kBool);
  {
    auto pool_cpu = torch::zeros({b, s_max, t}, torch::kFloat64);
    auto pa = pool_cpu.accessor<double, 3>();
    auto ma = mask.accessor<bool, 2>();
    for (int64_t i = 0; i < b; ++i) {
      const auto& spans = batch.spans[static_cast<size_t>(i)];
      for (size_t s = 0; s < spans.size(); ++s) {
        const double w = 1.0 / static_cast<double>(spans[s].size());
        for (int64_t k = spans[s].begin; k < spans[s].end; ++k) pa[i][static_cast<int64_t>(s)][k] = w;
        ma[i][static_cast<int64_t>(s)] = true;
      }
    }
    pool = pool_cpu.to(tokens.dtype());
  }
  auto valid = batch.valid.to(tokens.dtype());
  auto global_pool = valid / valid.sum(1, /*keepdim=*/true);

  TextFeatures out;
  out.sentences = l2_normalize(torch::matmul(pool, tokens));
  out.global = l2_normalize(torch::matmul(global_pool.unsqueeze(1), tokens).squeeze(1));
  out.sentence_mask = mask;
  return out;
}

}  // namespace qsvlm
