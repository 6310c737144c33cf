// Copyright 2026 The QSVLM Authors
// SPDX-License-Identifier: Apache-2.0
//
// Desk-scale evaluation protocols: zero-shot classification from prompt
// similarity, phrase grounding scored by IoU and contrast-to-noise ratio,
// a frozen-feature linear probe, and the scale-ablation matrix.

#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qsvlm/model.hpp"
#include "qsvlm/objective.hpp"
#include "qsvlm/synthetic.hpp"

namespace qsvlm {

// ---------------------------------------------------------------------------
// Classification metrics

/// Area under the ROC curve (Mann-Whitney, ties count one half). labels are
/// 0/1; throws unless both classes are present.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

struct ClassificationMetrics {
  std::vector<int> predictions;       // argmax, ties to the lowest class index
  std::vector<double> per_class_auc;  // one-vs-rest; NaN for classes absent from labels
  double macro_auc = 0.0;             // mean over classes with a defined AUC
  double accuracy = 0.0;
};

/// scores [N, K]; labels in [0, K).
ClassificationMetrics classification_metrics(const torch::Tensor& scores, const std::vector<int>& labels);

// ---------------------------------------------------------------------------
// Zero-shot classification

/// Global image embeddings [N, D], encoded in chunks without gradients.
torch::Tensor encode_images(PretrainModel& model, const torch::Tensor& images, int64_t chunk = 256);
/// Global embeddings of single-sentence prompts [K, D]. Throws on prompts
/// outside the vocabulary.
torch::Tensor encode_prompts(PretrainModel& model, const std::vector<std::string>& prompts);

struct ZeroShotResult {
  torch::Tensor scores;  // [N, K] cosine of image to class prompt
  ClassificationMetrics metrics;
};

ZeroShotResult zero_shot_from_embeddings(const torch::Tensor& image_embeddings, const torch::Tensor& prompt_embeddings,
                                         const std::vector<int>& labels);
/// Requires at least two prompts.
ZeroShotResult zero_shot_classify(PretrainModel& model, const torch::Tensor& images, const std::vector<int>& labels,
                                  const std::vector<std::string>& prompts);
/// The four motif prompts, in class order.
std::vector<std::string> default_class_prompts();

// ---------------------------------------------------------------------------
// Phrase grounding

enum class HeatmapMode {
  kCosine,     // patch/sentence cosine
  kAttention,  // sentence-conditioned attention weights
};

struct GroundingOptions {
  double threshold_k = 1.0;  // region = patches above mean + k * std
  HeatmapMode mode = HeatmapMode::kCosine;
  double tau_att = 0.1;
  bool operator==(const GroundingOptions&) const = default;
};

struct GroundingResult {
  int64_t grid = 0;            // heatmap is grid x grid
  int image_size = 0;
  std::vector<double> heatmap;  // row-major patch grid
  std::vector<uint8_t> region;  // image_size^2 pixel mask
  std::optional<Box> region_box;
  double iou = 0.0;
  std::optional<double> cnr;  // empty when the contrast is undefined
};

/// Patch-grid heatmap of one sentence over one image [1, H, W].
std::vector<double> sentence_heatmap(PretrainModel& model, const torch::Tensor& image, const std::string& sentence,
                                     const GroundingOptions& options = {});

/// Pixel mask of the patches whose value exceeds mean + k * std.
std::vector<uint8_t> threshold_region(std::span<const double> heatmap, int64_t grid, int image_size, double k);
/// Nearest-neighbour upsampling of a patch grid to pixels.
std::vector<double> upsample_heatmap(std::span<const double> heatmap, int64_t grid, int image_size);

std::vector<uint8_t> box_mask(const Box& box, int image_size);
double mask_iou(std::span<const uint8_t> a, std::span<const uint8_t> b);
std::optional<Box> mask_bounds(std::span<const uint8_t> mask, int image_size);

/// Contrast-to-noise ratio (mu_in - mu_out) / sqrt((var_in + var_out) / 2)
/// of pixel values inside vs outside the box (population variances). Throws
/// InvalidArgument for a degenerate box or zero pooled variance.
double cnr(std::span<const double> pixel_values, int image_size, const Box& box);

GroundingResult ground_from_heatmap(std::vector<double> heatmap, int64_t grid, int image_size, const Box& box,
                                    double threshold_k);
GroundingResult ground_phrase(PretrainModel& model, const torch::Tensor& image, const std::string& sentence,
                              const Box& box, const GroundingOptions& options = {});

/// Mean IoU; throws on an empty list.
double miou(const std::vector<GroundingResult>& results);

struct GroundingQuery {
  size_t sample = 0;
  size_t sentence = 0;
};
/// Every boxed sentence of the corpus, in order, capped at limit when > 0.
std::vector<GroundingQuery> grounding_queries(const std::vector<SyntheticSample>& samples, int64_t limit = 0);

struct GroundingSummary {
  double miou = 0.0;
  double mean_cnr = 0.0;  // over queries with a defined CNR
  int64_t queries = 0;
  int64_t undefined_cnr = 0;
  std::vector<GroundingResult> results;
};

GroundingSummary evaluate_grounding(PretrainModel& model, const std::vector<SyntheticSample>& samples,
                                    const GroundingOptions& options = {}, int64_t limit = 0);

// ---------------------------------------------------------------------------
// Linear probe

struct ProbeOptions {
  int64_t iterations = 300;
  double learning_rate = 0.05;
  double weight_decay = 1e-4;
  uint64_t seed = 0;
  bool operator==(const ProbeOptions&) const = default;
};

/// Trains a softmax classifier on a random `fraction` of the training rows
/// and returns its macro one-vs-rest AUC on the test rows. Throws when the
/// subset has fewer rows than there are classes.
double linear_probe(const torch::Tensor& train_features, const std::vector<int>& train_labels,
                    const torch::Tensor& test_features, const std::vector<int>& test_labels, double fraction,
                    const ProbeOptions& options = {});
double linear_probe(PretrainModel& model, const std::vector<SyntheticSample>& train,
                    const std::vector<SyntheticSample>& test, double fraction, const ProbeOptions& options = {});

// ---------------------------------------------------------------------------
// Ablation

struct EvalConfig {
  GroundingOptions grounding;
  ProbeOptions probe;
  std::vector<double> probe_fractions = {0.01, 0.1, 1.0};
  double ablation_probe_fraction = 0.01;
  bool operator==(const EvalConfig&) const = default;
};

struct AblationRow {
  ScaleToggles scales;
  std::optional<double> probe_auc;
  std::optional<double> zero_shot_auc;
  std::optional<double> zero_shot_accuracy;
  std::string failure;  // empty on success
};

struct AblationTable {
  std::optional<uint64_t> seed;  // empty for an aggregate
  std::vector<AblationRow> rows;
};

/// Trains every toggle combination from the same seed and scores each on the
/// held-out samples: probe AUC on a small labelled fraction, zero-shot AUC.
/// A failing row is annotated and the remaining rows still run.
AblationTable run_ablation(const TrainConfig& base, const std::vector<SyntheticSample>& train,
                           const std::vector<SyntheticSample>& held_out, const EvalConfig& eval);

/// Row-wise mean of per-seed tables (failed cells are skipped).
AblationTable mean_table(const std::vector<AblationTable>& tables);
std::string format_table(const AblationTable& table);

}  // namespace qsvlm
