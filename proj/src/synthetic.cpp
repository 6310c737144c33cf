// Copyright 2026 The QSVLM Authors
// SPDX-License-Identifier: Apache-2.0

#include "qsvlm/synthetic.hpp"


#include <algorithm>
#include <atomic>
#include <cmath>
#include <random>
#include <sstream>
#include <thread>

#include "qsvlm/errors.hpp"
#include "qsvlm/log.hpp"
#include "qsvlm/runtime.hpp"

namespace qsvlm {

namespace {

const std::vector<std::string>& content_words() {
  static const std::vector<std::string> words = {
      "there", "is",     "a",     "blob",  "ring",    "bar",         "cross",        "in",
      "the",   "upper",  "lower", "left",  "right",   "lungs",       "are",          "clear",
      "heart", "size",   "normal", "no",   "pleural", "effusion",    "seen",         "bones",
      "intact", "mediastinum", "unremarkable",
  };
  return words;
}

const std::array<std::string_view, 5>& normal_sentences() {
  static const std::array<std::string_view, 5> s = {
      "the lungs are clear.",
      "heart size is normal.",
      "no pleural effusion is seen.",
      "the bones are intact.",
      "the mediastinum is unremarkable.",
  };
  return s;
}

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

using Canvas = std::vector<float>;

// Paints one motif into the canvas and returns its tight bounding box.
Box paint_motif(Canvas& canvas, int size, MotifKind kind, int x0, int y0, int extent, float intensity,
                std::mt19937_64& rng) {
  auto put = [&](int x, int y, float v) {
    auto& p = canvas[static_cast<size_t>(y) * static_cast<size_t>(size) + static_cast<size_t>(x)];
    p = std::max(p, v);
  };
  const double c = (extent - 1) / 2.0;
  const double r = extent / 2.0;
  switch (kind) {
    case MotifKind::kBlob:
      for (int dy = 0; dy < extent; ++dy)
        for (int dx = 0; dx < extent; ++dx) {
          const double d = std::hypot(dx - c, dy - c);
          if (d <= r) put(x0 + dx, y0 + dy, intensity * static_cast<float>(1.0 - 0.35 * (d / r)));
        }
      return {x0, y0, x0 + extent, y0 + extent};
    case MotifKind::kRing:
      for (int dy = 0; dy < extent; ++dy)
        for (int dx = 0; dx < extent; ++dx) {
          const double d = std::hypot(dx - c, dy - c);
          if (d <= r && d >= r - 2.5) put(x0 + dx, y0 + dy, intensity);
        }
      return {x0, y0, x0 + extent, y0 + extent};
    case MotifKind::kBar: {
      const int thick = std::max(3, extent / 3);
      const int offset = (extent - thick) / 2;
      const bool horizontal = std::bernoulli_distribution(0.5)(rng);
      for (int a = 0; a < extent; ++a)
        for (int t = 0; t < thick; ++t) {
          if (horizontal) {
            put(x0 + a, y0 + offset + t, intensity);
          } else {
            put(x0 + offset + t, y0 + a, intensity);
          }
        }
      if (horizontal) return {x0, y0 + offset, x0 + extent, y0 + offset + thick};
      return {x0 + offset, y0, x0 + offset + thick, y0 + extent};
    }
    case MotifKind::kCross: {
      const int thick = 3;
      const int offset = (extent - thick) / 2;
      for (int a = 0; a < extent; ++a)
        for (int t = 0; t < thick; ++t) {
          put(x0 + a, y0 + offset + t, intensity);
          put(x0 + offset + t, y0 + a, intensity);
        }
      return {x0, y0, x0 + extent, y0 + extent};
    }
  }
  return {};
}

std::string finding_sentence(MotifKind kind, const Box& box, int size, bool with_location) {
  std::string s = "there is a " + std::string(motif_name(kind));
  if (with_location) {
    const double cx = (box.x0 + box.x1) / 2.0;
    const double cy = (box.y0 + box.y1) / 2.0;
    s += cy < size / 2.0 ? " in the upper" : " in the lower";
    s += cx < size / 2.0 ? " left" : " right";
  }
  return s + ".";
}

// One generation attempt; empty when motif placement runs out of retries.
std::optional<SyntheticSample> try_generate(const CorpusConfig& cfg, std::mt19937_64& rng) {
  const int size = cfg.image_size;
  Canvas canvas(static_cast<size_t>(size) * static_cast<size_t>(size));
  std::uniform_real_distribution<float> noise(0.05f, 0.25f);
  for (auto& p : canvas) p = noise(rng);

  const int count = std::uniform_int_distribution<int>(cfg.min_motifs, cfg.max_motifs)(rng);
  std::array<MotifKind, kMotifKinds> all = {MotifKind::kBlob, MotifKind::kRing, MotifKind::kBar, MotifKind::kCross};
  std::shuffle(all.begin(), all.end(), rng);

  SyntheticSample sample;
  sample.image_size = size;
  std::vector<Box> occupied;
  for (int m = 0; m < count; ++m) {
    const auto kind = all[static_cast<size_t>(m)];
    const int extent = std::uniform_int_distribution<int>(cfg.min_motif_size, cfg.max_motif_size)(rng);
    std::uniform_int_distribution<int> origin(0, size - extent);
    std::optional<Box> placed;
    for (int attempt = 0; attempt < cfg.max_placement_retries && !placed; ++attempt) {
      Box candidate{origin(rng), origin(rng), 0, 0};
      candidate.x1 = candidate.x0 + extent;
      candidate.y1 = candidate.y0 + extent;
      const bool clash = std::any_of(occupied.begin(), occupied.end(),
                                     [&](const Box& o) { return candidate.overlaps(o, 2); });
      if (!clash) placed = candidate;
    }
    if (!placed) return std::nullopt;
    occupied.push_back(*placed);
    const float intensity = std::uniform_real_distribution<float>(0.75f, 1.0f)(rng);
    const auto box = paint_motif(canvas, size, kind, placed->x0, placed->y0, extent, intensity, rng);
    sample.motifs.push_back({kind, box});
  }

  std::bernoulli_distribution with_location(cfg.location_prob);
  for (size_t m = 0; m < sample.motifs.size(); ++m) {
    const auto& motif = sample.motifs[m];
    sample.sentences.push_back(
        {finding_sentence(motif.kind, motif.box, size, with_location(rng)), static_cast<int>(m)});
  }
  const int distractors = std::uniform_int_distribution<int>(0, cfg.max_distractors)(rng);
  std::vector<std::string_view> normals(normal_sentences().begin(), normal_sentences().end());
  std::shuffle(normals.begin(), normals.end(), rng);
  for (int d = 0; d < distractors; ++d) sample.sentences.push_back({std::string(normals[static_cast<size_t>(d)]), {}});
  std::shuffle(sample.sentences.begin(), sample.sentences.end(), rng);

  std::vector<MotifKind> kinds;
  for (const auto& m : sample.motifs) kinds.push_back(m.kind);
  sample.class_label = motif_set_label(kinds);

  sample.pixels.resize(canvas.size());
  for (size_t i = 0; i < canvas.size(); ++i) {
    sample.pixels[i] = static_cast<uint8_t>(std::lround(std::clamp(canvas[i], 0.0f, 1.0f) * 255.0f));
  }
  return sample;
}

}  // namespace

const Vocabulary& Vocabulary::standard() {
  static const Vocabulary vocab(content_words());
  return vocab;
}

Vocabulary::Vocabulary(std::vector<std::string> content) {
  tokens_ = {"[PAD]", "[MASK]", "[CLS]", "[SEP]", "."};
  tokens_.insert(tokens_.end(), content.begin(), content.end());
  for (size_t i = 0; i < tokens_.size(); ++i) {
    const bool fresh = ids_.emplace(tokens_[i], static_cast<int64_t>(i)).second;
    require(fresh, "Vocabulary: duplicate token '" + tokens_[i] + "'");
  }
}

int64_t Vocabulary::id(std::string_view word) const {
  auto it = ids_.find(std::string(word));
  if (it == ids_.end()) throw InvalidArgument("tokenize: out-of-vocabulary word '" + std::string(word) + "'");
  return it->second;
}

const std::string& Vocabulary::token(int64_t id) const {
  require(id >= 0 && id < size(), "Vocabulary: id out of range");
  return tokens_[static_cast<size_t>(id)];
}

bool Vocabulary::contains(std::string_view word) const { return ids_.count(std::string(word)) > 0; }

TokenizedReport tokenize(std::string_view text, const Vocabulary& vocab) {
  TokenizedReport out;
  std::istringstream in{std::string(text)};
  std::string word;
  int64_t start = 0;
  while (in >> word) {
    bool period = false;
    if (word.size() > 1 && word.back() == '.') {
      word.pop_back();
      period = true;
    } else if (word == ".") {
      word.clear();
      period = true;
    }
    if (!word.empty()) out.ids.push_back(vocab.id(word));
    if (period) {
      out.ids.push_back(Vocabulary::kPeriod);
      const auto end = static_cast<int64_t>(out.ids.size());
      out.sentences.push_back({start, end});
      start = end;
    }
  }
  require(!out.ids.empty(), "tokenize: empty report");
  if (start < static_cast<int64_t>(out.ids.size())) {
    out.sentences.push_back({start, static_cast<int64_t>(out.ids.size())});
  }
  return out;
}

std::string detokenize(const std::vector<int64_t>& ids, const Vocabulary& vocab) {
  std::string out;
  for (auto id : ids) {
    if (id == Vocabulary::kPeriod) {
      out += '.';
      continue;
    }
    if (!out.empty()) out += ' ';
    out += vocab.token(id);
  }
  return out;
}

std::string_view motif_name(MotifKind kind) {
  switch (kind) {
    case MotifKind::kBlob: return "blob";
    case MotifKind::kRing: return "ring";
    case MotifKind::kBar: return "bar";
    case MotifKind::kCross: return "cross";
  }
  return "?";
}

bool Box::overlaps(const Box& o, int margin) const {
  return x0 < o.x1 + margin && o.x0 < x1 + margin && y0 < o.y1 + margin && o.y0 < y1 + margin;
}

std::string SyntheticSample::report() const {
  std::string out;
  for (const auto& s : sentences) {
    if (!out.empty()) out += ' ';
    out += s.text;
  }
  return out;
}

std::optional<Box> SyntheticSample::sentence_box(size_t i) const {
  const auto& s = sentences.at(i);
  if (!s.motif) return std::nullopt;
  return motifs.at(static_cast<size_t>(*s.motif)).box;
}

torch::Tensor SyntheticSample::image() const {
  auto bytes = torch::from_blob(const_cast<uint8_t*>(pixels.data()), {1, image_size, image_size}, torch::kUInt8);
  return bytes.to(torch::kFloat32) / 255.0;
}

void CorpusConfig::validate() const {
  require(image_size >= 8, "CorpusConfig: image_size too small");
  require(min_motif_size >= 4 && min_motif_size <= max_motif_size && max_motif_size <= image_size,
          "CorpusConfig: motif size range invalid");
  require(min_motifs >= 1 && min_motifs <= max_motifs && max_motifs <= kMotifKinds,
          "CorpusConfig: motif count range must lie within [1, 4]");
  require(max_distractors >= 0 && max_distractors <= static_cast<int>(normal_sentences().size()),
          "CorpusConfig: max_distractors out of range");
  require(location_prob >= 0.0 && location_prob <= 1.0, "CorpusConfig: location_prob must lie in [0, 1]");
  require(max_placement_retries >= 1, "CorpusConfig: max_placement_retries must be >= 1");
}

int motif_set_label(std::vector<MotifKind> kinds) {
  require(!kinds.empty() && kinds.size() <= kMotifKinds, "motif_set_label: need 1..4 kinds");
  std::sort(kinds.begin(), kinds.end());
  require(std::adjacent_find(kinds.begin(), kinds.end()) == kinds.end(), "motif_set_label: kinds must be distinct");
  // Enumerate subsets by size, then lexicographically, until the match.
  int label = 0;
  for (int k = 1; k <= kMotifKinds; ++k) {
    std::vector<bool> pick(kMotifKinds, false);
    std::fill(pick.begin(), pick.begin() + k, true);
    do {
      std::vector<MotifKind> subset;
      for (int i = 0; i < kMotifKinds; ++i)
        if (pick[static_cast<size_t>(i)]) subset.push_back(static_cast<MotifKind>(i));
      if (subset == kinds) return label;
      ++label;
    } while (std::prev_permutation(pick.begin(), pick.end()));
  }
  throw InvalidArgument("motif_set_label: unreachable");
}

int motif_set_label_count(int max_motifs) {
  int count = 0;
  int binom = 1;
  for (int k = 1; k <= max_motifs; ++k) {
    binom = binom * (kMotifKinds - k + 1) / k;
    count += binom;
  }
  return count;
}

uint64_t sample_seed(uint64_t corpus_seed, int64_t index) {
  return splitmix64(corpus_seed ^ splitmix64(static_cast<uint64_t>(index)));
}

SyntheticSample generate_sample(const CorpusConfig& config, uint64_t corpus_seed, int64_t index) {
  config.validate();
  const uint64_t seed = sample_seed(corpus_seed, index);
  std::mt19937_64 rng(seed);
  int failures = 0;
  for (;;) {
    if (auto sample = try_generate(config, rng)) {
      if (failures > 0) log_info("sample " + std::to_string(index) + ": regenerated after " + std::to_string(failures) + " failed motif placements");
      sample->index = index;
      sample->seed = seed;
      return std::move(*sample);
    }
    ++failures;
    require(failures < 1000, "generate_sample: motif placement keeps failing; motifs too large for the image");
  }
}

std::vector<SyntheticSample> generate_corpus(int64_t n, const CorpusConfig& config, uint64_t seed,
                                             int64_t first_index) {
  require(n >= 1, "generate_corpus: n must be >= 1");
  config.validate();
  std::vector<SyntheticSample> out(static_cast<size_t>(n));
  std::atomic<int64_t> next{0};
  auto work = [&] {
    for (int64_t i = next++; i < n; i = next++) {
      out[static_cast<size_t>(i)] = generate_sample(config, seed, first_index + i);
    }
  };
  const int threads = static_cast<int>(std::min<int64_t>(worker_threads(), n));
  std::vector<std::jthread> pool;
  for (int t = 1; t < threads; ++t) pool.emplace_back(work);
  work();
  return out;
}

std::string class_prompt(MotifKind kind) { return "there is a " + std::string(motif_name(kind)) + "."; }

torch::Tensor stack_images(const std::vector<SyntheticSample>& samples) {
  require(!samples.empty(), "stack_images: no samples");
  std::vector<torch::Tensor> images;
  images.reserve(samples.size());
  for (const auto& s : samples) images.push_back(s.image());
  return torch::stack(images);
}

std::vector<TokenizedReport> tokenize_reports(const std::vector<SyntheticSample>& samples) {
  std::vector<TokenizedReport> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(tokenize(s.report()));
  return out;
}

}  // namespace qsvlm
