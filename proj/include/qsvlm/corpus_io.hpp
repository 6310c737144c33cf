// Copyright 2026 The QSVLM Authors
// SPDX-License-Identifier: Apache-2.0
//
// On-disk corpus:
//   <dir>/corpus.json          generation config, seed and sample count
//   <dir>/images/NNNNNN.png    8-bit grayscale, lossless
//   <dir>/annotations.jsonl    one record per sample:
//     {"index", "image", "seed", "label", "report",
//      "sentences": [{"text", "box": [x0, y0, x1, y1] | null, "motif": kind | null}]}

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qsvlm/synthetic.hpp"

namespace qsvlm {

struct CorpusInfo {
  CorpusConfig config;
  uint64_t seed = 0;
  int64_t first_index = 0;
  int64_t count = 0;
};

void write_gray_png(const std::filesystem::path& path, std::span<const uint8_t> pixels, int width, int height);
std::vector<uint8_t> read_gray_png(const std::filesystem::path& path, int& width, int& height);
void write_rgb_png(const std::filesystem::path& path, std::span<const uint8_t> rgb, int width, int height);

void save_corpus(const std::filesystem::path& dir, const std::vector<SyntheticSample>& samples, const CorpusInfo& info);
/// Throws FormatError on missing files or malformed records.
std::vector<SyntheticSample> load_corpus(const std::filesystem::path& dir, CorpusInfo* info = nullptr);

/// Gray image with the heatmap blended in red (stronger red = higher value)
/// and the ground-truth box drawn in black.
void write_overlay_png(const std::filesystem::path& path, const SyntheticSample& sample,
                       std::span<const double> pixel_heatmap, const std::optional<Box>& box);

}  // namespace qsvlm
