// Copyright 2026 The QSVLM Authors
// SPDX-License-Identifier: Apache-2.0
//
// Weighted four-scale objective, the optimization loop, and checkpoints.

#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "qsvlm/encoders.hpp"
#include "qsvlm/errors.hpp"
#include "qsvlm/losses_global.hpp"
#include "qsvlm/losses_modality.hpp"
#include "qsvlm/model.hpp"
#include "qsvlm/synthetic.hpp"

namespace qsvlm {

struct LossWeights {
  double global = 1.0;
  double local = 1.0;
  double instance = 1.0;
  double modality = 1.0;

  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

/// Optional scales. The global term is always on.
struct ScaleToggles {
  bool local = true;
  bool instance = true;
  bool modality = true;

  std::string label() const;  // e.g. "local+instance", "global-only"
  bool operator==(const ScaleToggles&) const = default;
};

/// The seven non-empty combinations of {local, instance, modality}: singles,
/// then pairs, then all three.
std::vector<ScaleToggles> ablation_toggles();

struct LossBundle {
  double l_g = 0.0;
  std::optional<double> l_l;  // empty when the scale is disabled
  std::optional<double> l_i;
  std::optional<double> l_m;
  double total = 0.0;

  bool operator==(const LossBundle&) const = default;
};

/// lambda-weighted sum of the present components, in double precision.
double combine(const LossBundle& components, const LossWeights& weights);

struct TrainConfig {
  EncoderConfig encoder;
  TemperatureParams temps;
  LossWeights weights;
  ScaleToggles scales;
  ContrastMode contrast = ContrastMode::kSymmetric;
  double image_mask_ratio = 0.75;
  double text_mask_ratio = 0.15;
  bool normalize_pixel_targets = true;
  ReconTarget recon_target = ReconTarget::kPixels;
  int64_t decoder_depth = 2;
  int64_t batch_size = 32;
  int64_t steps = 600;
  double learning_rate = 3e-4;
  double weight_decay = 0.01;
  uint64_t seed = 0;

  void validate() const;
  ModelOptions model_options() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Training inputs held in memory.
struct Dataset {
  torch::Tensor images;  // [N, 1, H, W]
  std::vector<TokenizedReport> reports;
  std::vector<int> labels;

  int64_t size() const { return static_cast<int64_t>(reports.size()); }
  static Dataset from_samples(const std::vector<SyntheticSample>& samples);
};

struct Batch {
  torch::Tensor images;
  TokenBatch tokens;
};

Batch make_batch(const Dataset& data, const std::vector<int64_t>& indices, const EncoderConfig& encoder);

struct CombinedLoss {
  torch::Tensor total;  // differentiable
  LossBundle bundle;
};

/// Every enabled scale is computed by its module; disabled scales are not
/// evaluated at all. Randomness (masks, corruption, negatives) comes from rng.
/// Component failures are rethrown as InvalidArgument naming the scale.
CombinedLoss combined_loss(PretrainModel& model, const Batch& batch, const TrainConfig& config, std::mt19937_64& rng);

/// Raised when a step produces a non-finite loss.
class NonFiniteLoss : public Error {
 public:
  NonFiniteLoss(int64_t step, LossBundle bundle);
  int64_t step;
  LossBundle bundle;
};

struct Checkpoint {
  static constexpr uint32_t kVersion = 1;

  TrainConfig config;
  int64_t step = 0;
  std::string rng_state;
  std::vector<std::pair<std::string, torch::Tensor>> tensors;  // parameters and optimizer state, in order

  const torch::Tensor* find(const std::string& name) const;
};

/// Binary file: "QSVLM1" magic, version, JSON header, named arrays, SHA-256
/// trailer. Throws FormatError on version mismatch, truncation or corruption.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Rebuilds the model stored in a checkpoint (parameters only).
PretrainModel model_from_checkpoint(const Checkpoint& ckpt);

/// Owns parameters, optimizer state and the random stream of one run.
class Trainer {
 public:
  explicit Trainer(TrainConfig config);
  explicit Trainer(const Checkpoint& ckpt);

  /// One optimizer step on a freshly sampled batch. Throws NonFiniteLoss.
  LossBundle step(const Dataset& data);

  Checkpoint checkpoint() const;
  PretrainModel& model() { return model_; }
  const TrainConfig& config() const { return config_; }
  int64_t steps_done() const { return step_; }

 private:
  TrainConfig config_;
  PretrainModel model_{nullptr};
  std::unique_ptr<torch::optim::AdamW> optimizer_;
  std::mt19937_64 rng_;
  int64_t step_ = 0;
};

struct MetricsRecord {
  int64_t step = 0;
  LossBundle losses;
  double wall_ms = 0.0;
};

/// One JSON line {step, l_g, [l_l, l_i, l_m,] total, wall_ms}; disabled scales
/// are omitted.
std::string metrics_line(const MetricsRecord& record);
/// Same record without the wall-clock field.
std::string metrics_line_untimed(const MetricsRecord& record);

using MetricsSink = std::function<void(const MetricsRecord&)>;

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<MetricsRecord> log;
};

/// Runs until config.steps optimizer steps have been taken in total (resumed
/// runs continue the step counter). Throws InvalidArgument on an empty
/// dataset and NonFiniteLoss on divergence.
TrainResult train(const TrainConfig& config, const Dataset& data, const MetricsSink& sink = {},
                  const std::optional<Checkpoint>& resume = std::nullopt);

}  // namespace qsvlm
