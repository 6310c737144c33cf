// Copyright 2026 The QSVLM Authors
// SPDX-License-Identifier: Apache-2.0

#include "qsvlm/corpus_io.hpp"

#include <png.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>

#include "json.hpp"
#include "qsvlm/config.hpp"
#include "qsvlm/errors.hpp"

namespace qsvlm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

void write_png(const fs::path& path, std::span<const uint8_t> data, int width, int height, int color_type,
               int channels) {
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw Error("png: cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error("png: cannot allocate writer");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("png: failed writing " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const size_t stride = static_cast<size_t>(width) * static_cast<size_t>(channels);
  for (int y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(data.data() + static_cast<size_t>(y) * stride));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::string image_name(int64_t index) {
  std::ostringstream os;
  os << "images/" << std::setw(6) << std::setfill('0') << index << ".png";
  return os.str();
}

json box_json(const Box& b) { return json::array({b.x0, b.y0, b.x1, b.y1}); }

}  // namespace

void write_gray_png(const fs::path& path, std::span<const uint8_t> pixels, int width, int height) {
  require(pixels.size() == static_cast<size_t>(width) * static_cast<size_t>(height), "png: pixel count mismatch");
  write_png(path, pixels, width, height, PNG_COLOR_TYPE_GRAY, 1);
}

void write_rgb_png(const fs::path& path, std::span<const uint8_t> rgb, int width, int height) {
  require(rgb.size() == static_cast<size_t>(width) * static_cast<size_t>(height) * 3, "png: pixel count mismatch");
  write_png(path, rgb, width, height, PNG_COLOR_TYPE_RGB, 3);
}

std::vector<uint8_t> read_gray_png(const fs::path& path, int& width, int& height) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw FormatError("png: cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("png: cannot allocate reader");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("png: failed reading " + path.string());
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  if (png_get_color_type(png, info) != PNG_COLOR_TYPE_GRAY || png_get_bit_depth(png, info) != 8) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("png: " + path.string() + " is not 8-bit grayscale");
  }
  width = static_cast<int>(png_get_image_width(png, info));
  height = static_cast<int>(png_get_image_height(png, info));
  std::vector<uint8_t> pixels(static_cast<size_t>(width) * static_cast<size_t>(height));
  for (int y = 0; y < height; ++y) png_read_row(png, pixels.data() + static_cast<size_t>(y) * static_cast<size_t>(width), nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return pixels;
}

void save_corpus(const fs::path& dir, const std::vector<SyntheticSample>& samples, const CorpusInfo& info) {
  fs::create_directories(dir / "images");
  json meta = {{"config", to_json(info.config)},
               {"seed", info.seed},
               {"first_index", info.first_index},
               {"count", static_cast<int64_t>(samples.size())}};
  {
    std::ofstream out(dir / "corpus.json");
    out << meta.dump(2) << '\n';
  }
  std::ofstream ann(dir / "annotations.jsonl");
  if (!ann) throw Error("save_corpus: cannot write annotations in " + dir.string());
  for (const auto& s : samples) {
    const auto name = image_name(s.index);
    write_gray_png(dir / name, s.pixels, s.image_size, s.image_size);
    nlohmann::ordered_json rec;
    rec["index"] = s.index;
    rec["image"] = name;
    rec["seed"] = s.seed;
    rec["label"] = s.class_label;
    rec["report"] = s.report();
    rec["sentences"] = json::array();
    for (size_t i = 0; i < s.sentences.size(); ++i) {
      nlohmann::ordered_json sj;
      sj["text"] = s.sentences[i].text;
      if (auto box = s.sentence_box(i)) {
        sj["box"] = box_json(*box);
        sj["motif"] = motif_name(s.motifs[static_cast<size_t>(*s.sentences[i].motif)].kind);
      } else {
        sj["box"] = nullptr;
        sj["motif"] = nullptr;
      }
      rec["sentences"].push_back(sj);
    }
    ann << rec.dump() << '\n';
  }
}

std::vector<SyntheticSample> load_corpus(const fs::path& dir, CorpusInfo* info) {
  if (!fs::is_regular_file(dir / "annotations.jsonl")) {
    throw FormatError("load_corpus: " + dir.string() + " has no annotations.jsonl");
  }
  if (info) {
    std::ifstream in(dir / "corpus.json");
    if (!in) throw FormatError("load_corpus: " + dir.string() + " has no corpus.json");
    try {
      auto meta = json::parse(in);
      info->config = corpus_config_from_json(meta.at("config"));
      info->seed = meta.at("seed").get<uint64_t>();
      info->first_index = meta.at("first_index").get<int64_t>();
      info->count = meta.at("count").get<int64_t>();
    } catch (const json::exception& e) {
      throw FormatError(std::string("load_corpus: bad corpus.json: ") + e.what());
    }
  }

  std::vector<SyntheticSample> out;
  std::ifstream ann(dir / "annotations.jsonl");
  std::string line;
  int64_t line_no = 0;
  while (std::getline(ann, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      auto rec = json::parse(line);
      SyntheticSample s;
      s.index = rec.at("index").get<int64_t>();
      s.seed = rec.at("seed").get<uint64_t>();
      s.class_label = rec.at("label").get<int>();
      int w = 0, h = 0;
      s.pixels = read_gray_png(dir / rec.at("image").get<std::string>(), w, h);
      if (w != h) throw FormatError("load_corpus: non-square image");
      s.image_size = w;
      for (const auto& sj : rec.at("sentences")) {
        ReportSentence sentence{sj.at("text").get<std::string>(), std::nullopt};
        if (!sj.at("box").is_null()) {
          const auto& b = sj.at("box");
          Motif m;
          m.box = {b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(), b.at(3).get<int>()};
          const auto kind = sj.at("motif").get<std::string>();
          bool known = false;
          for (int k = 0; k < kMotifKinds; ++k) {
            if (motif_name(static_cast<MotifKind>(k)) == kind) {
              m.kind = static_cast<MotifKind>(k);
              known = true;
            }
          }
          if (!known) throw FormatError("load_corpus: unknown motif '" + kind + "'");
          sentence.motif = static_cast<int>(s.motifs.size());
          s.motifs.push_back(m);
        }
        s.sentences.push_back(std::move(sentence));
      }
      out.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw FormatError("load_corpus: annotations.jsonl line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (out.empty()) throw FormatError("load_corpus: " + dir.string() + " contains no samples");
  return out;
}

void write_overlay_png(const fs::path& path, const SyntheticSample& sample, std::span<const double> heat,
                       const std::optional<Box>& box) {
  const int n = sample.image_size;
  require(heat.size() == static_cast<size_t>(n) * static_cast<size_t>(n), "overlay: heatmap must be pixel-sized");
  const auto [lo_it, hi_it] = std::minmax_element(heat.begin(), heat.end());
  const double lo = *lo_it;
  const double span = std::max(*hi_it - lo, 1e-12);
  std::vector<uint8_t> rgb(static_cast<size_t>(n) * static_cast<size_t>(n) * 3);
  for (size_t i = 0; i < heat.size(); ++i) {
    const double g = sample.pixels[i] / 255.0;
    const double a = 0.6 * (heat[i] - lo) / span;
    rgb[3 * i + 0] = static_cast<uint8_t>(std::lround(255.0 * ((1.0 - a) * g + a)));
    rgb[3 * i + 1] = static_cast<uint8_t>(std::lround(255.0 * (1.0 - a) * g));
    rgb[3 * i + 2] = static_cast<uint8_t>(std::lround(255.0 * (1.0 - a) * g));
  }
  if (box) {
    auto black = [&](int x, int y) {
      if (x < 0 || y < 0 || x >= n || y >= n) return;
      const auto i = 3 * (static_cast<size_t>(y) * static_cast<size_t>(n) + static_cast<size_t>(x));
      rgb[i] = rgb[i + 1] = rgb[i + 2] = 0;
    };
    for (int x = box->x0; x < box->x1; ++x) {
      black(x, box->y0);
      black(x, box->y1 - 1);
    }
    for (int y = box->y0; y < box->y1; ++y) {
      black(box->x0, y);
      black(box->x1 - 1, y);
    }
  }
  write_rgb_png(path, rgb, n, n);
}

}  // namespace qsvlm
