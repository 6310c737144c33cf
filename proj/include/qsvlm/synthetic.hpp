// Copyright 2026 The QSVLM Authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic paired image/report corpus. Each image carries one or more
// shape motifs on a noisy background; the report names each motif in its own
// sentence (with a box) and mixes in "normal" sentences that carry none.

#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "qsvlm/encoders.hpp"

namespace qsvlm {

class Vocabulary {
 public:
  static constexpr int64_t kPad = 0;
  static constexpr int64_t kMask = 1;
  static constexpr int64_t kCls = 2;
  static constexpr int64_t kSep = 3;
  static constexpr int64_t kPeriod = 4;
  static constexpr int64_t kFirstContent = 5;

  /// The closed vocabulary of the report grammar.
  static const Vocabulary& standard();

  explicit Vocabulary(std::vector<std::string> content_words);

  int64_t size() const { return static_cast<int64_t>(tokens_.size()); }
  /// Throws InvalidArgument for out-of-vocabulary words.
  int64_t id(std::string_view word) const;
  const std::string& token(int64_t id) const;
  bool contains(std::string_view word) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int64_t> ids_;
};

/// Splits a report into word ids; sentences end at period tokens.
TokenizedReport tokenize(std::string_view text, const Vocabulary& vocab = Vocabulary::standard());
std::string detokenize(const std::vector<int64_t>& ids, const Vocabulary& vocab = Vocabulary::standard());

enum class MotifKind : int { kBlob = 0, kRing = 1, kBar = 2, kCross = 3 };
inline constexpr int kMotifKinds = 4;
std::string_view motif_name(MotifKind kind);

/// Pixel rectangle, half-open: x in [x0, x1), y in [y0, y1).
struct Box {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  int64_t area() const { return static_cast<int64_t>(x1 - x0) * (y1 - y0); }
  bool overlaps(const Box& other, int margin = 0) const;
  bool operator==(const Box&) const = default;
};

struct Motif {
  MotifKind kind = MotifKind::kBlob;
  Box box;
  bool operator==(const Motif&) const = default;
};

struct ReportSentence {
  std::string text;
  std::optional<int> motif;  // index into SyntheticSample::motifs; empty for normal sentences
  bool operator==(const ReportSentence&) const = default;
};

struct SyntheticSample {
  int64_t index = 0;
  uint64_t seed = 0;
  int image_size = 0;
  std::vector<uint8_t> pixels;  // row-major, 8-bit gray
  std::vector<Motif> motifs;
  std::vector<ReportSentence> sentences;
  int class_label = 0;

  std::string report() const;
  /// Box of sentence i, if it describes a motif.
  std::optional<Box> sentence_box(size_t i) const;
  /// [1, H, W] float in [0, 1].
  torch::Tensor image() const;
  bool operator==(const SyntheticSample&) const = default;
};

struct CorpusConfig {
  int image_size = 64;
  int min_motif_size = 12;
  int max_motif_size = 20;
  int min_motifs = 1;
  int max_motifs = 1;
  int max_distractors = 2;
  double location_prob = 0.5;  // chance a finding sentence names its quadrant
  int max_placement_retries = 64;

  void validate() const;
  bool operator==(const CorpusConfig&) const = default;
};

/// Canonical id of a set of distinct motif kinds: singletons map to their kind
/// (0..3), pairs follow (4..9), then triples (10..13), each block in
/// lexicographic order.
int motif_set_label(std::vector<MotifKind> kinds);
int motif_set_label_count(int max_motifs);

/// Per-sample seed derived from the corpus seed and the sample index.
uint64_t sample_seed(uint64_t corpus_seed, int64_t index);

SyntheticSample generate_sample(const CorpusConfig& config, uint64_t corpus_seed, int64_t index);

/// n samples with indices [first_index, first_index + n). Generated in
/// parallel; the result depends only on (config, seed, indices).
std::vector<SyntheticSample> generate_corpus(int64_t n, const CorpusConfig& config, uint64_t seed,
                                             int64_t first_index = 0);

/// Zero-shot prompt for a motif class, e.g. "there is a blob."
std::string class_prompt(MotifKind kind);

/// Stacked images [N, 1, H, W].
torch::Tensor stack_images(const std::vector<SyntheticSample>& samples);
/// Reports tokenized with the standard vocabulary.
std::vector<TokenizedReport> tokenize_reports(const std::vector<SyntheticSample>& samples);

}  // namespace qsvlm
