// Copyright 2026 The QSVLM Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <torch/torch.h>

#include "qsvlm/encoders.hpp"
#include "qsvlm/losses_instance.hpp"
#include "qsvlm/losses_modality.hpp"

namespace qsvlm {

struct ModelOptions {
  EncoderConfig encoder;
  ReconTarget recon_target = ReconTarget::kPixels;
  int64_t decoder_depth = 2;
};

/// Both towers plus every objective head. Heads of disabled scales stay in the
/// module (so checkpoints have one layout) but receive no gradient.
class PretrainModelImpl : public torch::nn::Module {
 public:
  explicit PretrainModelImpl(const ModelOptions& options);

  const ModelOptions& options() const { return options_; }

  VisionEncoder vision{nullptr};
  TextEncoder text{nullptr};
  MaskedDecoder decoder{nullptr};
  torch::nn::Linear mlm_head{nullptr};
  MatchHead match_head{nullptr};

 private:
  ModelOptions options_;
};
TORCH_MODULE(PretrainModel);

}  // namespace qsvlm
