// Copyright 2026 The QSVLM Authors
// SPDX-License-Identifier: Apache-2.0

#include "qsvlm/losses_local.hpp"

#include <limits>

#include "qsvlm/encoders.hpp"
#include "qsvlm/errors.hpp"

namespace qsvlm {

namespace {

struct PairwiseTerms {
  torch::Tensor attn;      // [Bv, Bt, S, P]
  torch::Tensor contexts;  // [Bv, Bt, S, D]
  torch::Tensor cosines;   // [Bv, Bt, S]
};

PairwiseTerms pairwise_terms(const torch::Tensor& patches, const torch::Tensor& sentences, double tau_att) {
  require(patches.dim() == 3 && sentences.dim() == 3, "local alignment: expected [B, P, D] patches and [B, S, D] sentences");
  require(patches.size(1) >= 1, "local alignment: no patches");
  require(patches.size(2) == sentences.size(2), "local alignment: embedding dims differ");
  require(tau_att > 0.0, "local alignment: tau_att must be positive");

  auto unit_patches = l2_normalize(patches);
  auto unit_sentences = l2_normalize(sentences);
  auto logits = torch::einsum("apd,bsd->absp", {unit_patches, unit_sentences}) / tau_att;
  auto attn = torch::softmax(logits, -1);
  auto contexts = l2_normalize(torch::einsum("absp,apd->absd", {attn, patches}));
  auto cosines = (contexts * unit_sentences.unsqueeze(0)).sum(-1);
  return {attn, contexts, cosines};
}

torch::Tensor smooth_max(const torch::Tensor& cosines, const torch::Tensor& mask, double tau2) {
  auto masked = cosines.masked_fill(mask.logical_not(), -std::numeric_limits<double>::infinity());
  return tau2 * torch::logsumexp(masked / tau2, -1);
}

}  // namespace

AttentionContext attention_context(const torch::Tensor& patches, const torch::Tensor& sentence, double tau_att) {
  require(patches.dim() == 2 && sentence.dim() == 1, "attention_context: expected patches [P, D] and sentence [D]");
  require(patches.size(0) >= 1, "attention_context: P must be >= 1");
  auto terms = pairwise_terms(patches.unsqueeze(0), sentence.view({1, 1, -1}), tau_att);
  return {terms.contexts[0][0][0], terms.attn[0][0][0]};
}

LocalMatch local_match(const torch::Tensor& patches, const torch::Tensor& sentences, double tau2, double tau_att,
                       const std::optional<torch::Tensor>& sentence_mask) {
  require(patches.dim() == 2 && sentences.dim() == 2, "local_match: expected patches [P, D] and sentences [S, D]");
  require(tau2 > 0.0, "local_match: tau2 must be positive");
  auto mask = sentence_mask ? *sentence_mask : torch::ones({sentences.size(0)}, torch::kBool);
  require(mask.dim() == 1 && mask.size(0) == sentences.size(0), "local_match: mask must be [S]");
  require(mask.any().item<bool>(), "local_match: no valid sentences");
  auto terms = pairwise_terms(patches.unsqueeze(0), sentences.unsqueeze(0), tau_att);
  auto cosines = terms.cosines[0][0];
  return {terms.contexts[0][0], terms.attn[0][0], smooth_max(cosines, mask, tau2)};
}

torch::Tensor local_matching_z(const torch::Tensor& patches, const torch::Tensor& sentences, double tau2,
                               double tau_att, const std::optional<torch::Tensor>& sentence_mask) {
  return local_match(patches, sentences, tau2, tau_att, sentence_mask).z;
}

torch::Tensor pairwise_matching_z(const torch::Tensor& patches, const torch::Tensor& sentences,
                                  const torch::Tensor& sentence_mask, double tau2, double tau_att,
                                  torch::Tensor* attn_out) {
  require(tau2 > 0.0, "local alignment: tau2 must be positive");
  require(sentence_mask.dim() == 2 && sentence_mask.size(0) == sentences.size(0) &&
              sentence_mask.size(1) == sentences.size(1),
          "local alignment: sentence_mask must be [B, S]");
  require(sentence_mask.any(1).all().item<bool>(), "local alignment: a report has zero valid sentences");
  auto terms = pairwise_terms(patches, sentences, tau_att);
  if (attn_out) *attn_out = terms.attn;
  return smooth_max(terms.cosines, sentence_mask.unsqueeze(0), tau2);
}

torch::Tensor local_alignment_loss(const torch::Tensor& patches, const torch::Tensor& sentences,
                                   const torch::Tensor& sentence_mask, const TemperatureParams& temps,
                                   ContrastMode mode) {
  temps.validate();
  require(patches.size(0) >= 1 && patches.size(0) == sentences.size(0),
          "local_alignment_loss: image and report batches must be the same non-zero size");
  auto z = pairwise_matching_z(patches, sentences, sentence_mask, temps.tau2, temps.tau_att);
  return diagonal_info_nce(z / temps.tau2, mode);
}

}  // namespace qsvlm
