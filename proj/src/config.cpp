// Copyright 2026 The QSVLM Authors
// SPDX-License-Identifier: Apache-2.0

#include "qsvlm/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "qsvlm/errors.hpp"

namespace qsvlm {

using nlohmann::json;

namespace {

// Reads fields from one JSON object and rejects whatever is left unread.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw InvalidArgument("config: '" + path_ + "' must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->get<T>();
    } catch (const json::exception& e) {
      throw InvalidArgument("config: bad value for '" + path_ + "." + key + "': " + e.what());
    }
  }

  template <typename Enum>
  void get_enum(const char* key, Enum& out, std::initializer_list<std::pair<const char*, Enum>> names) {
    std::string text;
    bool present = j_.contains(key);
    get(key, text);
    if (!present) return;
    for (const auto& [name, value] : names) {
      if (text == name) {
        out = value;
        return;
      }
    }
    throw InvalidArgument("config: unknown value '" + text + "' for '" + path_ + "." + key + "'");
  }

  std::optional<Section> child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return std::nullopt;
    return Section(*it, path_.empty() ? key : path_ + "." + key);
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw InvalidArgument("config: unknown key '" + (path_.empty() ? key : path_ + "." + key) + "'");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

const char* contrast_name(ContrastMode m) { return m == ContrastMode::kSymmetric ? "symmetric" : "image_to_text"; }
const char* target_name(ReconTarget t) { return t == ReconTarget::kPixels ? "pixels" : "latent"; }
const char* heatmap_name(HeatmapMode m) { return m == HeatmapMode::kCosine ? "cosine" : "attention"; }

void read_train(Section& root, TrainConfig& c) {
  if (auto s = root.child("encoder")) {
    s->get("image_size", c.encoder.image_size);
    s->get("patch_size", c.encoder.patch_size);
    s->get("embed_dim", c.encoder.embed_dim);
    s->get("depth", c.encoder.depth);
    s->get("heads", c.encoder.heads);
    s->get("vocab_size", c.encoder.vocab_size);
    s->get("max_tokens", c.encoder.max_tokens);
    s->get("max_sentences", c.encoder.max_sentences);
    s->get("vision_window", c.encoder.vision_window);
    s->finish();
  }
  if (auto s = root.child("temperatures")) {
    s->get("tau1", c.temps.tau1);
    s->get("tau2", c.temps.tau2);
    s->get("tau_att", c.temps.tau_att);
    s->finish();
  }
  if (auto s = root.child("weights")) {
    s->get("global", c.weights.global);
    s->get("local", c.weights.local);
    s->get("instance", c.weights.instance);
    s->get("modality", c.weights.modality);
    s->finish();
  }
  if (auto s = root.child("scales")) {
    s->get("local", c.scales.local);
    s->get("instance", c.scales.instance);
    s->get("modality", c.scales.modality);
    s->finish();
  }
  if (auto s = root.child("training")) {
    s->get("batch_size", c.batch_size);
    s->get("steps", c.steps);
    s->get("learning_rate", c.learning_rate);
    s->get("weight_decay", c.weight_decay);
    s->get("seed", c.seed);
    s->get_enum("contrast", c.contrast,
                {{"symmetric", ContrastMode::kSymmetric}, {"image_to_text", ContrastMode::kImageToText}});
    s->finish();
  }
  if (auto s = root.child("masking")) {
    s->get("image_ratio", c.image_mask_ratio);
    s->get("text_ratio", c.text_mask_ratio);
    s->get("normalize_pixel_targets", c.normalize_pixel_targets);
    s->get_enum("recon_target", c.recon_target, {{"pixels", ReconTarget::kPixels}, {"latent", ReconTarget::kLatent}});
    s->get("decoder_depth", c.decoder_depth);
    s->finish();
  }
}

void read_corpus(Section& s, CorpusConfig& c) {
  s.get("image_size", c.image_size);
  s.get("min_motif_size", c.min_motif_size);
  s.get("max_motif_size", c.max_motif_size);
  s.get("min_motifs", c.min_motifs);
  s.get("max_motifs", c.max_motifs);
  s.get("max_distractors", c.max_distractors);
  s.get("location_prob", c.location_prob);
  s.get("max_placement_retries", c.max_placement_retries);
  s.finish();
}

void read_eval(Section& s, EvalConfig& c) {
  s.get("threshold_k", c.grounding.threshold_k);
  s.get_enum("heatmap", c.grounding.mode, {{"cosine", HeatmapMode::kCosine}, {"attention", HeatmapMode::kAttention}});
  s.get("tau_att", c.grounding.tau_att);
  s.get("probe_fractions", c.probe_fractions);
  s.get("ablation_probe_fraction", c.ablation_probe_fraction);
  if (auto p = s.child("probe")) {
    p->get("iterations", c.probe.iterations);
    p->get("learning_rate", c.probe.learning_rate);
    p->get("weight_decay", c.probe.weight_decay);
    p->get("seed", c.probe.seed);
    p->finish();
  }
  s.finish();
}

void validate_eval(const EvalConfig& c) {
  require(c.grounding.tau_att > 0.0, "config: evaluation.tau_att must be positive");
  require(c.probe.iterations >= 1 && c.probe.learning_rate > 0.0, "config: probe settings invalid");
  for (double f : c.probe_fractions) require(f > 0.0 && f <= 1.0, "config: probe fractions must lie in (0, 1]");
  require(c.ablation_probe_fraction > 0.0 && c.ablation_probe_fraction <= 1.0,
          "config: ablation_probe_fraction must lie in (0, 1]");
}

}  // namespace

json to_json(const TrainConfig& c) {
  return {
      {"encoder",
       {{"image_size", c.encoder.image_size},
        {"patch_size", c.encoder.patch_size},
        {"embed_dim", c.encoder.embed_dim},
        {"depth", c.encoder.depth},
        {"heads", c.encoder.heads},
        {"vocab_size", c.encoder.vocab_size},
        {"max_tokens", c.encoder.max_tokens},
        {"max_sentences", c.encoder.max_sentences},
        {"vision_window", c.encoder.vision_window}}},
      {"temperatures", {{"tau1", c.temps.tau1}, {"tau2", c.temps.tau2}, {"tau_att", c.temps.tau_att}}},
      {"weights",
       {{"global", c.weights.global},
        {"local", c.weights.local},
        {"instance", c.weights.instance},
        {"modality", c.weights.modality}}},
      {"scales", {{"local", c.scales.local}, {"instance", c.scales.instance}, {"modality", c.scales.modality}}},
      {"training",
       {{"batch_size", c.batch_size},
        {"steps", c.steps},
        {"learning_rate", c.learning_rate},
        {"weight_decay", c.weight_decay},
        {"seed", c.seed},
        {"contrast", contrast_name(c.contrast)}}},
      {"masking",
       {{"image_ratio", c.image_mask_ratio},
        {"text_ratio", c.text_mask_ratio},
        {"normalize_pixel_targets", c.normalize_pixel_targets},
        {"recon_target", target_name(c.recon_target)},
        {"decoder_depth", c.decoder_depth}}},
  };
}

json to_json(const CorpusConfig& c) {
  return {{"image_size", c.image_size},         {"min_motif_size", c.min_motif_size},
          {"max_motif_size", c.max_motif_size}, {"min_motifs", c.min_motifs},
          {"max_motifs", c.max_motifs},         {"max_distractors", c.max_distractors},
          {"location_prob", c.location_prob},   {"max_placement_retries", c.max_placement_retries}};
}

json to_json(const EvalConfig& c) {
  return {{"threshold_k", c.grounding.threshold_k},
          {"heatmap", heatmap_name(c.grounding.mode)},
          {"tau_att", c.grounding.tau_att},
          {"probe_fractions", c.probe_fractions},
          {"ablation_probe_fraction", c.ablation_probe_fraction},
          {"probe",
           {{"iterations", c.probe.iterations},
            {"learning_rate", c.probe.learning_rate},
            {"weight_decay", c.probe.weight_decay},
            {"seed", c.probe.seed}}}};
}

json to_json(const RunConfig& c) {
  json j = to_json(c.train);
  j["corpus"] = to_json(c.corpus);
  j["evaluation"] = to_json(c.eval);
  return j;
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  Section root(j, "");
  read_train(root, c);
  root.finish();
  c.validate();
  return c;
}

CorpusConfig corpus_config_from_json(const json& j) {
  CorpusConfig c;
  Section s(j, "corpus");
  read_corpus(s, c);
  c.validate();
  return c;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  Section root(j, "");
  read_train(root, c.train);
  if (auto s = root.child("corpus")) read_corpus(*s, c.corpus);
  if (auto s = root.child("evaluation")) read_eval(*s, c.eval);
  root.finish();
  c.train.validate();
  c.corpus.validate();
  validate_eval(c.eval);
  require(c.corpus.image_size == c.train.encoder.image_size,
          "config: corpus.image_size must equal encoder.image_size");
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("config: cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw InvalidArgument("config: " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace qsvlm
