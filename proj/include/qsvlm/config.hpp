// Copyright 2026 The QSVLM Authors
// SPDX-License-Identifier: Apache-2.0
//
// JSON run configuration. Every section is optional and falls back to the
// defaults; unknown keys anywhere are rejected.
//
//   {
//     "encoder":      {"image_size", "patch_size", "embed_dim", "depth", "heads",
//                      "vocab_size", "max_tokens", "max_sentences"},
//     "temperatures": {"tau1", "tau2", "tau_att"},
//     "weights":      {"global", "local", "instance", "modality"},
//     "scales":       {"local", "instance", "modality"},
//     "training":     {"batch_size", "steps", "learning_rate", "weight_decay", "seed",
//                      "contrast": "symmetric" | "image_to_text"},
//     "masking":      {"image_ratio", "text_ratio", "normalize_pixel_targets",
//                      "recon_target": "pixels" | "latent", "decoder_depth"},
//     "corpus":       {"image_size", "min_motif_size", "max_motif_size", "min_motifs",
//                      "max_motifs", "max_distractors", "location_prob",
//                      "max_placement_retries"},
//     "evaluation":   {"threshold_k", "heatmap": "cosine" | "attention", "tau_att",
//                      "probe_fractions", "ablation_probe_fraction",
//                      "probe": {"iterations", "learning_rate", "weight_decay", "seed"}}
//   }

#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"

#include "qsvlm/evaluation.hpp"
#include "qsvlm/objective.hpp"
#include "qsvlm/synthetic.hpp"

namespace qsvlm {

struct RunConfig {
  TrainConfig train;
  CorpusConfig corpus;
  EvalConfig eval;
  bool operator==(const RunConfig&) const = default;
};

nlohmann::json to_json(const TrainConfig& config);
nlohmann::json to_json(const CorpusConfig& config);
nlohmann::json to_json(const EvalConfig& config);
nlohmann::json to_json(const RunConfig& config);

/// Strict parsers: throw InvalidArgument on unknown keys, wrong types or
/// values that fail validation.
TrainConfig train_config_from_json(const nlohmann::json& j);
CorpusConfig corpus_config_from_json(const nlohmann::json& j);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace qsvlm
