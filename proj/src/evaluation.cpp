// Copyright 2026 The QSVLM Authors
// SPDX-License-Identifier: Apache-2.0

#include "qsvlm/evaluation.hpp"


#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "qsvlm/errors.hpp"
#include "qsvlm/log.hpp"
#include "qsvlm/losses_local.hpp"

namespace qsvlm {

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  require(scores.size() == labels.size(), "roc_auc: scores and labels differ in length");
  const size_t n = scores.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return scores[a] < scores[b]; });

  // Average ranks over tied groups.
  std::vector<double> rank(n);
  for (size_t i = 0; i < n;) {
    size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (size_t k = i; k <= j; ++k) rank[order[k]] = r;
    i = j + 1;
  }
  double pos = 0.0, rank_sum = 0.0;
  for (size_t i = 0; i < n; ++i) {
    if (labels[i] != 0) {
      pos += 1.0;
      rank_sum += rank[i];
    }
  }
  const double neg = static_cast<double>(n) - pos;
  require(pos > 0.0 && neg > 0.0, "roc_auc: need at least one positive and one negative");
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

ClassificationMetrics classification_metrics(const torch::Tensor& scores, const std::vector<int>& labels) {
  require(scores.dim() == 2 && scores.size(0) == static_cast<int64_t>(labels.size()),
          "classification_metrics: scores must be [N, K] with one label per row");
  require(scores.size(0) >= 1 && scores.size(1) >= 2, "classification_metrics: need N >= 1 and K >= 2");
  const auto n = scores.size(0);
  const auto k = scores.size(1);
  auto s = scores.detach().to(torch::kFloat64).contiguous();
  auto a = s.accessor<double, 2>();

  ClassificationMetrics m;
  int64_t correct = 0;
  for (int64_t i = 0; i < n; ++i) {
    int best = 0;
    for (int64_t c = 1; c < k; ++c)
      if (a[i][c] > a[i][best]) best = static_cast<int>(c);
    m.predictions.push_back(best);
    require(labels[static_cast<size_t>(i)] >= 0 && labels[static_cast<size_t>(i)] < k,
            "classification_metrics: label out of range");
    if (best == labels[static_cast<size_t>(i)]) ++correct;
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(n);

  double sum = 0.0;
  int defined = 0;
  for (int64_t c = 0; c < k; ++c) {
    std::vector<double> col(static_cast<size_t>(n));
    std::vector<int> bin(static_cast<size_t>(n));
    int pos = 0;
    for (int64_t i = 0; i < n; ++i) {
      col[static_cast<size_t>(i)] = a[i][c];
      bin[static_cast<size_t>(i)] = labels[static_cast<size_t>(i)] == c ? 1 : 0;
      pos += bin[static_cast<size_t>(i)];
    }
    if (pos == 0 || pos == n) {
      m.per_class_auc.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    const double auc = roc_auc(col, bin);
    m.per_class_auc.push_back(auc);
    sum += auc;
    ++defined;
  }
  require(defined > 0, "classification_metrics: AUC undefined for every class");
  m.macro_auc = sum / defined;
  return m;
}

torch::Tensor encode_images(PretrainModel& model, const torch::Tensor& images, int64_t chunk) {
  torch::NoGradGuard no_grad;
  model->eval();
  std::vector<torch::Tensor> parts;
  for (int64_t start = 0; start < images.size(0); start += chunk) {
    const auto end = std::min(images.size(0), start + chunk);
    parts.push_back(model->vision->forward(images.slice(0, start, end)).global);
  }
  return torch::cat(parts);
}

torch::Tensor encode_prompts(PretrainModel& model, const std::vector<std::string>& prompts) {
  torch::NoGradGuard no_grad;
  model->eval();
  std::vector<TokenizedReport> reports;
  for (const auto& p : prompts) reports.push_back(tokenize(p));
  auto batch = make_token_batch(reports, model->options().encoder, Vocabulary::kPad);
  return model->text->forward(batch).global;
}

ZeroShotResult zero_shot_from_embeddings(const torch::Tensor& image_embeddings, const torch::Tensor& prompt_embeddings,
                                         const std::vector<int>& labels) {
  require(prompt_embeddings.size(0) >= 2, "zero_shot_classify: need at least two classes");
  ZeroShotResult r;
  r.scores = torch::matmul(l2_normalize(image_embeddings), l2_normalize(prompt_embeddings).t());
  r.metrics = classification_metrics(r.scores, labels);
  return r;
}

ZeroShotResult zero_shot_classify(PretrainModel& model, const torch::Tensor& images, const std::vector<int>& labels,
                                  const std::vector<std::string>& prompts) {
  require(prompts.size() >= 2, "zero_shot_classify: need at least two class prompts");
  auto prompt_emb = encode_prompts(model, prompts);
  return zero_shot_from_embeddings(encode_images(model, images), prompt_emb, labels);
}

std::vector<std::string> default_class_prompts() {
  std::vector<std::string> out;
  for (int k = 0; k < kMotifKinds; ++k) out.push_back(class_prompt(static_cast<MotifKind>(k)));
  return out;
}

std::vector<double> sentence_heatmap(PretrainModel& model, const torch::Tensor& image, const std::string& sentence,
                                     const GroundingOptions& options) {
  torch::NoGradGuard no_grad;
  model->eval();
  auto batch = make_token_batch({tokenize(sentence)}, model->options().encoder, Vocabulary::kPad);
  auto query = model->text->forward(batch).global[0];
  auto patches = model->vision->forward(image.unsqueeze(0)).patches[0];
  torch::Tensor heat;
  if (options.mode == HeatmapMode::kCosine) {
    heat = torch::matmul(l2_normalize(patches), query);
  } else {
    heat = attention_context(patches, query, options.tau_att).weights;
  }
  heat = heat.to(torch::kFloat64).contiguous();
  return {heat.data_ptr<double>(), heat.data_ptr<double>() + heat.numel()};
}

std::vector<double> upsample_heatmap(std::span<const double> heatmap, int64_t grid, int image_size) {
  require(static_cast<int64_t>(heatmap.size()) == grid * grid, "upsample_heatmap: heatmap is not grid x grid");
  require(grid >= 1 && image_size % grid == 0, "upsample_heatmap: image size must be a multiple of the grid");
  const int cell = static_cast<int>(image_size / grid);
  std::vector<double> out(static_cast<size_t>(image_size) * static_cast<size_t>(image_size));
  for (int y = 0; y < image_size; ++y)
    for (int x = 0; x < image_size; ++x)
      out[static_cast<size_t>(y) * static_cast<size_t>(image_size) + static_cast<size_t>(x)] =
          heatmap[static_cast<size_t>((y / cell) * grid + x / cell)];
  return out;
}

std::vector<uint8_t> threshold_region(std::span<const double> heatmap, int64_t grid, int image_size, double k) {
  require(!heatmap.empty(), "threshold_region: empty heatmap");
  const double n = static_cast<double>(heatmap.size());
  const double mean = std::accumulate(heatmap.begin(), heatmap.end(), 0.0) / n;
  double var = 0.0;
  for (double v : heatmap) var += (v - mean) * (v - mean);
  const double threshold = mean + k * std::sqrt(var / n);
  std::vector<double> hot(heatmap.size());
  for (size_t i = 0; i < heatmap.size(); ++i) hot[i] = heatmap[i] > threshold ? 1.0 : 0.0;
  auto pixels = upsample_heatmap(hot, grid, image_size);
  std::vector<uint8_t> mask(pixels.size());
  for (size_t i = 0; i < pixels.size(); ++i) mask[i] = pixels[i] > 0.5 ? 1 : 0;
  return mask;
}

std::vector<uint8_t> box_mask(const Box& box, int image_size) {
  std::vector<uint8_t> mask(static_cast<size_t>(image_size) * static_cast<size_t>(image_size), 0);
  for (int y = std::max(0, box.y0); y < std::min(image_size, box.y1); ++y)
    for (int x = std::max(0, box.x0); x < std::min(image_size, box.x1); ++x)
      mask[static_cast<size_t>(y) * static_cast<size_t>(image_size) + static_cast<size_t>(x)] = 1;
  return mask;
}

double mask_iou(std::span<const uint8_t> a, std::span<const uint8_t> b) {
  require(a.size() == b.size(), "mask_iou: masks differ in size");
  int64_t inter = 0, uni = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    inter += (a[i] && b[i]) ? 1 : 0;
    uni += (a[i] || b[i]) ? 1 : 0;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::optional<Box> mask_bounds(std::span<const uint8_t> mask, int image_size) {
  std::optional<Box> box;
  for (int y = 0; y < image_size; ++y)
    for (int x = 0; x < image_size; ++x) {
      if (!mask[static_cast<size_t>(y) * static_cast<size_t>(image_size) + static_cast<size_t>(x)]) continue;
      if (!box) box = Box{x, y, x + 1, y + 1};
      box->x0 = std::min(box->x0, x);
      box->y0 = std::min(box->y0, y);
      box->x1 = std::max(box->x1, x + 1);
      box->y1 = std::max(box->y1, y + 1);
    }
  return box;
}

double cnr(std::span<const double> values, int image_size, const Box& box) {
  require(values.size() == static_cast<size_t>(image_size) * static_cast<size_t>(image_size),
          "cnr: values must cover the image");
  require(box.area() > 0, "cnr: degenerate box");
  auto inside = box_mask(box, image_size);
  double sum_in = 0.0, sum_out = 0.0;
  int64_t n_in = 0, n_out = 0;
  for (size_t i = 0; i < values.size(); ++i) {
    if (inside[i]) {
      sum_in += values[i];
      ++n_in;
    } else {
      sum_out += values[i];
      ++n_out;
    }
  }
  require(n_in > 0 && n_out > 0, "cnr: box interior and exterior must both be non-empty");
  const double mu_in = sum_in / static_cast<double>(n_in);
  const double mu_out = sum_out / static_cast<double>(n_out);
  double var_in = 0.0, var_out = 0.0;
  for (size_t i = 0; i < values.size(); ++i) {
    if (inside[i]) {
      var_in += (values[i] - mu_in) * (values[i] - mu_in);
    } else {
      var_out += (values[i] - mu_out) * (values[i] - mu_out);
    }
  }
  var_in /= static_cast<double>(n_in);
  var_out /= static_cast<double>(n_out);
  const double pooled = (var_in + var_out) / 2.0;
  // Rounding noise of a constant map is treated as zero variance.
  const double scale = std::max({std::abs(mu_in), std::abs(mu_out), 1.0});
  if (!(pooled > 1e-24 * scale * scale)) {
    std::ostringstream os;
    os << "cnr: zero pooled variance (mu_in=" << mu_in << ", mu_out=" << mu_out << "); contrast undefined";
    throw InvalidArgument(os.str());
  }
  return (mu_in - mu_out) / std::sqrt(pooled);
}

GroundingResult ground_from_heatmap(std::vector<double> heatmap, int64_t grid, int image_size, const Box& box,
                                    double threshold_k) {
  for (double v : heatmap) require(std::isfinite(v), "ground_phrase: non-finite heatmap");
  GroundingResult r;
  r.grid = grid;
  r.image_size = image_size;
  r.region = threshold_region(heatmap, grid, image_size, threshold_k);
  r.region_box = mask_bounds(r.region, image_size);
  r.iou = mask_iou(r.region, box_mask(box, image_size));
  try {
    r.cnr = cnr(upsample_heatmap(heatmap, grid, image_size), image_size, box);
  } catch (const InvalidArgument& e) {
    log_debug(e.what());
  }
  r.heatmap = std::move(heatmap);
  return r;
}

GroundingResult ground_phrase(PretrainModel& model, const torch::Tensor& image, const std::string& sentence,
                              const Box& box, const GroundingOptions& options) {
  const auto& cfg = model->options().encoder;
  return ground_from_heatmap(sentence_heatmap(model, image, sentence, options), cfg.grid(),
                             static_cast<int>(cfg.image_size), box, options.threshold_k);
}

double miou(const std::vector<GroundingResult>& results) {
  require(!results.empty(), "miou: no results");
  double sum = 0.0;
  for (const auto& r : results) sum += r.iou;
  return sum / static_cast<double>(results.size());
}

std::vector<GroundingQuery> grounding_queries(const std::vector<SyntheticSample>& samples, int64_t limit) {
  std::vector<GroundingQuery> out;
  for (size_t i = 0; i < samples.size(); ++i)
    for (size_t s = 0; s < samples[i].sentences.size(); ++s) {
      if (!samples[i].sentence_box(s)) continue;
      if (limit > 0 && static_cast<int64_t>(out.size()) >= limit) return out;
      out.push_back({i, s});
    }
  return out;
}

GroundingSummary evaluate_grounding(PretrainModel& model, const std::vector<SyntheticSample>& samples,
                                    const GroundingOptions& options, int64_t limit) {
  GroundingSummary summary;
  double cnr_sum = 0.0;
  int64_t cnr_count = 0;
  for (const auto& q : grounding_queries(samples, limit)) {
    const auto& s = samples[q.sample];
    auto r = ground_phrase(model, s.image(), s.sentences[q.sentence].text, *s.sentence_box(q.sentence), options);
    if (r.cnr) {
      cnr_sum += *r.cnr;
      ++cnr_count;
    } else {
      ++summary.undefined_cnr;
    }
    summary.results.push_back(std::move(r));
  }
  summary.queries = static_cast<int64_t>(summary.results.size());
  summary.miou = miou(summary.results);
  summary.mean_cnr = cnr_count > 0 ? cnr_sum / static_cast<double>(cnr_count) : 0.0;
  return summary;
}

double linear_probe(const torch::Tensor& train_features, const std::vector<int>& train_labels,
                    const torch::Tensor& test_features, const std::vector<int>& test_labels, double fraction,
                    const ProbeOptions& options) {
  require(fraction > 0.0 && fraction <= 1.0, "linear_probe: fraction must lie in (0, 1]");
  require(train_features.size(0) == static_cast<int64_t>(train_labels.size()) &&
              test_features.size(0) == static_cast<int64_t>(test_labels.size()),
          "linear_probe: one label per feature row");
  const int classes =
      1 + std::max(*std::max_element(train_labels.begin(), train_labels.end()),
                   *std::max_element(test_labels.begin(), test_labels.end()));
  const auto n = static_cast<int64_t>(train_labels.size());
  const auto count = std::max<int64_t>(1, std::llround(fraction * static_cast<double>(n)));
  if (count < classes) {
    throw InvalidArgument("linear_probe: labelled subset of " + std::to_string(count) + " rows is smaller than the " +
                          std::to_string(classes) + " classes");
  }
  std::vector<int64_t> all(static_cast<size_t>(n));
  std::iota(all.begin(), all.end(), int64_t{0});
  std::vector<int64_t> subset;
  std::mt19937_64 rng(options.seed);
  std::sample(all.begin(), all.end(), std::back_inserter(subset), count, rng);

  std::vector<int64_t> y_sub;
  for (auto i : subset) y_sub.push_back(train_labels[static_cast<size_t>(i)]);
  auto x = train_features.detach().to(torch::kFloat64).index_select(0, torch::tensor(subset, torch::kInt64));
  auto y = torch::tensor(y_sub, torch::kInt64);

  auto weight = torch::zeros({x.size(1), classes}, torch::dtype(torch::kFloat64).requires_grad(true));
  auto bias = torch::zeros({classes}, torch::dtype(torch::kFloat64).requires_grad(true));
  torch::optim::Adam opt({weight, bias}, torch::optim::AdamOptions(options.learning_rate));
  for (int64_t it = 0; it < options.iterations; ++it) {
    auto logits = torch::matmul(x, weight) + bias;
    auto loss = torch::nll_loss(torch::log_softmax(logits, 1), y) + options.weight_decay * weight.pow(2).sum();
    opt.zero_grad();
    loss.backward();
    opt.step();
  }
  torch::NoGradGuard no_grad;
  auto scores = torch::matmul(test_features.detach().to(torch::kFloat64), weight) + bias;
  return classification_metrics(scores, test_labels).macro_auc;
}

double linear_probe(PretrainModel& model, const std::vector<SyntheticSample>& train,
                    const std::vector<SyntheticSample>& test, double fraction, const ProbeOptions& options) {
  std::vector<int> train_labels, test_labels;
  for (const auto& s : train) train_labels.push_back(s.class_label);
  for (const auto& s : test) test_labels.push_back(s.class_label);
  return linear_probe(encode_images(model, stack_images(train)), train_labels, encode_images(model, stack_images(test)),
                      test_labels, fraction, options);
}

AblationTable run_ablation(const TrainConfig& base, const std::vector<SyntheticSample>& train_set,
                           const std::vector<SyntheticSample>& held_out, const EvalConfig& eval) {
  auto data = Dataset::from_samples(train_set);
  auto test_images = stack_images(held_out);
  std::vector<int> test_labels;
  for (const auto& s : held_out) test_labels.push_back(s.class_label);
  const auto prompts = default_class_prompts();

  AblationTable table;
  table.seed = base.seed;
  for (const auto& scales : ablation_toggles()) {
    AblationRow row;
    row.scales = scales;
    try {
      auto config = base;
      config.scales = scales;
      auto result = train(config, data);
      auto model = model_from_checkpoint(result.checkpoint);
      row.probe_auc = linear_probe(model, train_set, held_out, eval.ablation_probe_fraction, eval.probe);
      auto zs = zero_shot_classify(model, test_images, test_labels, prompts);
      row.zero_shot_auc = zs.metrics.macro_auc;
      row.zero_shot_accuracy = zs.metrics.accuracy;
    } catch (const std::exception& e) {
      row.failure = e.what();
      log_warn("ablation row " + scales.label() + " failed: " + e.what());
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

AblationTable mean_table(const std::vector<AblationTable>& tables) {
  require(!tables.empty(), "mean_table: no tables");
  AblationTable out;
  const auto rows = tables.front().rows.size();
  for (const auto& t : tables) require(t.rows.size() == rows, "mean_table: tables differ in row count");
  for (size_t r = 0; r < rows; ++r) {
    AblationRow row;
    row.scales = tables.front().rows[r].scales;
    auto mean_of = [&](auto field) -> std::optional<double> {
      double sum = 0.0;
      int n = 0;
      for (const auto& t : tables) {
        if (const auto& v = t.rows[r].*field) {
          sum += *v;
          ++n;
        }
      }
      if (n == 0) return std::nullopt;
      return sum / n;
    };
    row.probe_auc = mean_of(&AblationRow::probe_auc);
    row.zero_shot_auc = mean_of(&AblationRow::zero_shot_auc);
    row.zero_shot_accuracy = mean_of(&AblationRow::zero_shot_accuracy);
    for (const auto& t : tables) {
      if (!t.rows[r].failure.empty()) {
        if (!row.failure.empty()) row.failure += "; ";
        row.failure += "seed " + std::to_string(t.seed.value_or(0)) + ": " + t.rows[r].failure;
      }
    }
    out.rows.push_back(std::move(row));
  }
  return out;
}

std::string format_table(const AblationTable& table) {
  std::ostringstream os;
  auto mark = [](bool on) { return on ? "x" : " "; };
  auto cell = [](const std::optional<double>& v) {
    std::ostringstream c;
    if (v) {
      c << std::fixed << std::setprecision(4) << *v;
    } else {
      c << "-";
    }
    return c.str();
  };
  os << (table.seed ? "seed " + std::to_string(*table.seed) : std::string("mean over seeds")) << '\n';
  os << "local  instance  modality | probe_auc  zeroshot_auc  zeroshot_acc\n";
  os << "-------------------------+-------------------------------------\n";
  for (const auto& r : table.rows) {
    os << "  " << mark(r.scales.local) << "       " << mark(r.scales.instance) << "         " << mark(r.scales.modality)
       << "     | " << std::setw(9) << cell(r.probe_auc) << "  " << std::setw(12) << cell(r.zero_shot_auc) << "  "
       << std::setw(12) << cell(r.zero_shot_accuracy);
    if (!r.failure.empty()) os << "  FAILED: " << r.failure;
    os << '\n';
  }
  return os.str();
}

}  // namespace qsvlm
