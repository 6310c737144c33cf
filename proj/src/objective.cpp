// Copyright 2026 The QSVLM Authors
// SPDX-License-Identifier: Apache-2.0

#include "qsvlm/objective.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "qsvlm/losses_instance.hpp"
#include "qsvlm/losses_local.hpp"

namespace qsvlm {

void LossWeights::validate() const {
  require(global >= 0.0 && local >= 0.0 && instance >= 0.0 && modality >= 0.0,
          "LossWeights: weights must be non-negative");
  require(global > 0.0 || local > 0.0 || instance > 0.0 || modality > 0.0,
          "LossWeights: at least one weight must be positive");
}

std::string ScaleToggles::label() const {
  std::string out;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out += '+';
    out += name;
  };
  add(local, "local");
  add(instance, "instance");
  add(modality, "modality");
  return out.empty() ? "global-only" : out;
}

std::vector<ScaleToggles> ablation_toggles() {
  return {
      {true, false, false}, {false, true, false}, {false, false, true}, {true, true, false},
      {true, false, true},  {false, true, true},  {true, true, true},
  };
}

double combine(const LossBundle& c, const LossWeights& w) {
  double total = w.global * c.l_g;
  if (c.l_l) total += w.local * *c.l_l;
  if (c.l_i) total += w.instance * *c.l_i;
  if (c.l_m) total += w.modality * *c.l_m;
  return total;
}

void TrainConfig::validate() const {
  encoder.validate();
  temps.validate();
  weights.validate();
  require(image_mask_ratio > 0.0 && image_mask_ratio < 1.0, "TrainConfig: image_mask_ratio must lie in (0, 1)");
  require(text_mask_ratio > 0.0 && text_mask_ratio < 1.0, "TrainConfig: text_mask_ratio must lie in (0, 1)");
  const auto masked = masked_count(encoder.patch_count(), image_mask_ratio);
  require(masked >= 1 && masked < encoder.patch_count(),
          "TrainConfig: image mask must hide at least one patch and keep at least one");
  require(batch_size >= 1, "TrainConfig: batch_size must be >= 1");
  require(!scales.instance || batch_size >= 2, "TrainConfig: instance matching needs batch_size >= 2");
  require(steps >= 0, "TrainConfig: steps must be >= 0");
  require(learning_rate > 0.0 && weight_decay >= 0.0, "TrainConfig: invalid optimizer settings");
  require(decoder_depth >= 1, "TrainConfig: decoder_depth must be >= 1");
  require(encoder.vocab_size == Vocabulary::standard().size(),
          "TrainConfig: encoder.vocab_size must equal the report vocabulary size (" +
              std::to_string(Vocabulary::standard().size()) + ")");
}

ModelOptions TrainConfig::model_options() const { return {encoder, recon_target, decoder_depth}; }

Dataset Dataset::from_samples(const std::vector<SyntheticSample>& samples) {
  require(!samples.empty(), "Dataset: no samples");
  Dataset d;
  d.images = stack_images(samples);
  d.reports = tokenize_reports(samples);
  for (const auto& s : samples) d.labels.push_back(s.class_label);
  return d;
}

Batch make_batch(const Dataset& data, const std::vector<int64_t>& indices, const EncoderConfig& encoder) {
  require(!indices.empty(), "make_batch: empty batch");
  std::vector<TokenizedReport> reports;
  reports.reserve(indices.size());
  for (auto i : indices) reports.push_back(data.reports.at(static_cast<size_t>(i)));
  return {data.images.index_select(0, torch::tensor(indices, torch::kInt64)),
          make_token_batch(reports, encoder, Vocabulary::kPad)};
}

namespace {

template <typename F>
torch::Tensor scale_guard(const char* scale, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    throw InvalidArgument(std::string("[") + scale + " scale] " + e.what());
  }
}

double scalar(const torch::Tensor& t) { return t.detach().to(torch::kFloat64).item<double>(); }

}  // namespace

CombinedLoss combined_loss(PretrainModel& model, const Batch& batch, const TrainConfig& config, std::mt19937_64& rng) {
  const auto& cfg = config.encoder;
  auto vision = model->vision->forward(batch.images);
  auto text = model->text->forward(batch.tokens);

  CombinedLoss out;
  auto l_g = scale_guard("global", [&] {
    return global_alignment_loss(vision.global, text.global, config.temps.tau1, config.contrast);
  });
  out.bundle.l_g = scalar(l_g);
  out.total = config.weights.global * l_g;

  if (config.scales.local) {
    auto l_l = scale_guard("local", [&] {
      return local_alignment_loss(vision.patches, text.sentences, text.sentence_mask, config.temps, config.contrast);
    });
    out.bundle.l_l = scalar(l_l);
    out.total = out.total + config.weights.local * l_l;
  }

  if (config.scales.instance) {
    auto l_i = scale_guard("instance", [&] {
      auto sim = (torch::matmul(vision.global, text.global.t()) / config.temps.tau1).detach();
      auto negatives = sample_hard_negatives(sim, rng);
      auto mb = build_match_batch(vision.global, text.global, negatives, model->match_head);
      return instance_matching_loss(mb.probs, mb.labels);
    });
    out.bundle.l_i = scalar(l_i);
    out.total = out.total + config.weights.instance * l_i;
  }

  if (config.scales.modality) {
    auto l_m = scale_guard("modality", [&] {
      const auto b = batch.images.size(0);
      std::vector<MaskPlan> image_plans;
      for (int64_t i = 0; i < b; ++i) image_plans.push_back(make_mask(cfg.patch_count(), config.image_mask_ratio, rng()));
      auto image_term = image_recon_loss(model->vision, model->decoder, batch.images, image_plans,
                                         {config.normalize_pixel_targets, config.recon_target});

      auto lengths = batch.tokens.valid.sum(1);
      std::vector<MaskPlan> text_plans;
      for (int64_t i = 0; i < b; ++i) {
        text_plans.push_back(make_mask(lengths[i].item<int64_t>(), config.text_mask_ratio, rng()));
      }
      MlmVocab vocab{Vocabulary::kMask, Vocabulary::kFirstContent, cfg.vocab_size};
      auto inputs = corrupt_tokens(batch.tokens, text_plans, vocab, rng);
      auto text_term = mlm_loss(model->text, model->mlm_head, batch.tokens, inputs);
      return modality_loss(image_term, text_term);
    });
    out.bundle.l_m = scalar(l_m);
    out.total = out.total + config.weights.modality * l_m;
  }

  out.bundle.total = combine(out.bundle, config.weights);
  return out;
}

namespace {

std::string describe(const LossBundle& b) {
  std::ostringstream os;
  os << "l_g=" << b.l_g;
  if (b.l_l) os << " l_l=" << *b.l_l;
  if (b.l_i) os << " l_i=" << *b.l_i;
  if (b.l_m) os << " l_m=" << *b.l_m;
  os << " total=" << b.total;
  return os.str();
}

bool finite(const LossBundle& b) {
  auto ok = [](const std::optional<double>& v) { return !v || std::isfinite(*v); };
  return std::isfinite(b.l_g) && ok(b.l_l) && ok(b.l_i) && ok(b.l_m) && std::isfinite(b.total);
}

}  // namespace

NonFiniteLoss::NonFiniteLoss(int64_t s, LossBundle b)
    : Error("non-finite loss at step " + std::to_string(s) + ": " + describe(b)), step(s), bundle(b) {}

Trainer::Trainer(TrainConfig config) : config_(std::move(config)) {
  config_.validate();
  torch::manual_seed(config_.seed);
  model_ = PretrainModel(config_.model_options());
  optimizer_ = std::make_unique<torch::optim::AdamW>(
      model_->parameters(), torch::optim::AdamWOptions(config_.learning_rate).weight_decay(config_.weight_decay));
  rng_.seed(config_.seed);
}

LossBundle Trainer::step(const Dataset& data) {
  require(data.size() >= 1, "train: dataset is empty");
  const int64_t b = std::min<int64_t>(config_.batch_size, data.size());
  std::vector<int64_t> all(static_cast<size_t>(data.size()));
  std::iota(all.begin(), all.end(), int64_t{0});
  std::vector<int64_t> picked;
  picked.reserve(static_cast<size_t>(b));
  std::sample(all.begin(), all.end(), std::back_inserter(picked), b, rng_);

  auto batch = make_batch(data, picked, config_.encoder);
  model_->train();
  auto loss = combined_loss(model_, batch, config_, rng_);
  if (!finite(loss.bundle)) throw NonFiniteLoss(step_ + 1, loss.bundle);
  optimizer_->zero_grad();
  loss.total.backward();
  optimizer_->step();
  ++step_;
  return loss.bundle;
}

std::string metrics_line_untimed(const MetricsRecord& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["l_g"] = r.losses.l_g;
  if (r.losses.l_l) j["l_l"] = *r.losses.l_l;
  if (r.losses.l_i) j["l_i"] = *r.losses.l_i;
  if (r.losses.l_m) j["l_m"] = *r.losses.l_m;
  j["total"] = r.losses.total;
  return j.dump();
}

std::string metrics_line(const MetricsRecord& r) {
  auto line = metrics_line_untimed(r);
  line.pop_back();  // closing brace
  std::ostringstream os;
  os.precision(3);
  os << std::fixed << line << ",\"wall_ms\":" << r.wall_ms << '}';
  return os.str();
}

TrainResult train(const TrainConfig& config, const Dataset& data, const MetricsSink& sink,
                  const std::optional<Checkpoint>& resume) {
  require(data.size() >= 1, "train: dataset is empty");
  require(data.images.size(2) == config.encoder.image_size, "train: corpus image size does not match the encoder");
  Trainer trainer = [&] {
    if (!resume) return Trainer(config);
    auto ckpt = *resume;
    ckpt.config.steps = config.steps;
    return Trainer(ckpt);
  }();
  TrainResult result;
  while (trainer.steps_done() < config.steps) {
    const auto start = std::chrono::steady_clock::now();
    MetricsRecord record;
    record.losses = trainer.step(data);
    record.step = trainer.steps_done();
    record.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    if (sink) sink(record);
    result.log.push_back(record);
  }
  result.checkpoint = trainer.checkpoint();
  return result;
}

}  // namespace qsvlm
