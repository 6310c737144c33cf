// Copyright 2026 The QSVLM Authors
// SPDX-License-Identifier: Apache-2.0

#include "qsvlm/model.hpp"

namespace qsvlm {

PretrainModelImpl::PretrainModelImpl(const ModelOptions& options) : options_(options) {
  const auto& cfg = options_.encoder;
  cfg.validate();
  vision = register_module("vision", VisionEncoder(cfg));
  text = register_module("text", TextEncoder(cfg));
  const int64_t recon_dim = options_.recon_target == ReconTarget::kPixels ? cfg.patch_pixels() : cfg.embed_dim;
  decoder = register_module("decoder", MaskedDecoder(cfg, recon_dim, options_.decoder_depth));
  mlm_head = register_module("mlm_head", torch::nn::Linear(cfg.embed_dim, cfg.vocab_size));
  match_head = register_module("match_head", MatchHead(cfg.embed_dim));
}

}  // namespace qsvlm
