// Copyright 2026 The QSVLM Authors
// SPDX-License-Identifier: Apache-2.0
//
// qsvlm: generate a synthetic corpus, pretrain, evaluate, and run the scale
// ablation. Exit codes: 0 success, 2 usage, 3 runtime failure.

#include <torch/torch.h>

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "qsvlm/config.hpp"
#include "qsvlm/corpus_io.hpp"
#include "qsvlm/errors.hpp"
#include "qsvlm/evaluation.hpp"
#include "qsvlm/hashing.hpp"
#include "qsvlm/log.hpp"
#include "qsvlm/manifest.hpp"
#include "qsvlm/objective.hpp"
#include "qsvlm/runtime.hpp"
#include "qsvlm/synthetic.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace qsvlm;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

const std::vector<std::string> kCorpusHashExclude = {kManifestName};

struct Invocation {
  std::string command;
  std::vector<std::string> arguments;
};

RunManifest start_manifest(const Invocation& inv, const fs::path& out) {
  RunManifest m;
  m.command = inv.command;
  m.arguments = inv.arguments;
  m.output_dir = fs::absolute(out).lexically_normal().string();
  m.started_at = utc_timestamp();
  return m;
}

void finish_manifest(const fs::path& out, RunManifest m) {
  m.finished_at = utc_timestamp();
  write_manifest(out, m);
}

RunConfig read_config(const std::string& path, RunManifest* manifest) {
  if (path.empty()) return RunConfig{};
  if (!fs::is_regular_file(path)) throw UsageError("config file not found: " + path);
  if (manifest) {
    manifest->config_path = fs::absolute(path).lexically_normal().string();
    manifest->config_sha256 = sha256_file(path);
  }
  try {
    return load_run_config(path);
  } catch (const Error& e) {
    throw UsageError(std::string("invalid config: ") + e.what());
  }
}

void claim_output(const std::string& dir, bool force) {
  try {
    prepare_output_dir(dir, force);
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }
}

void write_config_copy(const fs::path& out, const RunConfig& config) {
  std::ofstream f(out / "config.json");
  f << to_json(config).dump(2) << '\n';
}

std::vector<SyntheticSample> read_corpus(const std::string& dir, CorpusInfo* info = nullptr) {
  if (!fs::is_directory(dir)) throw UsageError("corpus directory not found: " + dir);
  return load_corpus(dir, info);
}

std::string slug(const std::string& text) {
  std::string out;
  for (char c : text) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      out.push_back(c);
    } else if (c == ' ' && !out.empty() && out.back() != '_') {
      out.push_back('_');
    }
  }
  while (!out.empty() && out.back() == '_') out.pop_back();
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
}

// ---------------------------------------------------------------------------

struct GenArgs {
  int64_t n = 0;
  uint64_t seed = 0;
  int64_t first_index = 0;
  std::string out;
  std::string config;
  bool force = false;
};

int cmd_gen(const GenArgs& a, const Invocation& inv) {
  if (a.n <= 0) throw UsageError("--n must be positive");
  auto manifest = start_manifest(inv, a.out);
  const auto config = read_config(a.config, &manifest);
  claim_output(a.out, a.force);
  const auto samples = generate_corpus(a.n, config.corpus, a.seed, a.first_index);
  save_corpus(a.out, samples, CorpusInfo{config.corpus, a.seed, a.first_index, a.n});
  write_config_copy(a.out, config);
  manifest.seed = a.seed;
  manifest.corpus_hash = directory_hash(a.out, kCorpusHashExclude);
  finish_manifest(a.out, manifest);
  std::cout << "wrote " << a.n << " samples to " << a.out << " (content " << *manifest.corpus_hash << ")\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct PretrainArgs {
  std::string config;
  std::string data;
  std::string out;
  std::string resume;
  std::optional<uint64_t> seed;
  std::optional<int64_t> steps;
  int64_t checkpoint_every = 0;
  bool force = false;
};

void check_corpus_matches(const EncoderConfig& encoder, const CorpusInfo& info) {
  if (info.config.image_size != encoder.image_size) {
    throw InvalidArgument("config mismatch: corpus images are " + std::to_string(info.config.image_size) +
                          " px but the encoder expects " + std::to_string(encoder.image_size) + " px");
  }
}

int cmd_pretrain(const PretrainArgs& a, const Invocation& inv) {
  auto manifest = start_manifest(inv, a.out);
  auto config = read_config(a.config, &manifest);
  std::optional<Checkpoint> resume;
  if (!a.resume.empty()) {
    if (!fs::is_regular_file(a.resume)) throw UsageError("checkpoint not found: " + a.resume);
    resume = load_checkpoint(a.resume);
    if (a.config.empty()) {
      config.train = resume->config;
    } else if (!(resume->config.encoder == config.train.encoder)) {
      throw InvalidArgument("config mismatch: --resume checkpoint was trained with a different encoder");
    }
    manifest.extra["resumed_from"] = fs::absolute(a.resume).lexically_normal().string();
    manifest.extra["resumed_at_step"] = resume->step;
  }
  if (a.seed) config.train.seed = *a.seed;
  if (a.steps) config.train.steps = *a.steps;
  config.train.validate();
  if (resume && resume->step > config.train.steps) {
    throw InvalidArgument("checkpoint is already at step " + std::to_string(resume->step) + " beyond the target " +
                          std::to_string(config.train.steps));
  }

  CorpusInfo info;
  const auto samples = read_corpus(a.data, &info);
  check_corpus_matches(config.train.encoder, info);
  const auto data = Dataset::from_samples(samples);

  claim_output(a.out, a.force);
  write_config_copy(a.out, config);
  manifest.seed = config.train.seed;
  manifest.corpus_hash = directory_hash(a.data, kCorpusHashExclude);

  const fs::path out(a.out);
  std::ofstream metrics(out / "metrics.jsonl");
  if (resume) resume->config = config.train;
  Trainer trainer = resume ? Trainer(*resume) : Trainer(config.train);
  const auto log_every = std::max<int64_t>(1, config.train.steps / 20);
  try {
    while (trainer.steps_done() < config.train.steps) {
      const auto start = std::chrono::steady_clock::now();
      MetricsRecord record;
      record.losses = trainer.step(data);
      record.step = trainer.steps_done();
      record.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      metrics << metrics_line(record) << '\n' << std::flush;
      if (record.step % log_every == 0 || record.step == config.train.steps) {
        log_info("step " + std::to_string(record.step) + "/" + std::to_string(config.train.steps) + " " +
                 metrics_line_untimed(record));
      }
      if (a.checkpoint_every > 0 && record.step % a.checkpoint_every == 0 && record.step < config.train.steps) {
        std::ostringstream name;
        name << "checkpoint_step" << std::setw(6) << std::setfill('0') << record.step << ".qsvlm";
        save_checkpoint(trainer.checkpoint(), out / name.str());
      }
    }
  } catch (const NonFiniteLoss& e) {
    save_checkpoint(trainer.checkpoint(), out / "checkpoint_last_finite.qsvlm");
    manifest.extra["failure"] = e.what();
    finish_manifest(out, manifest);
    throw;
  }
  save_checkpoint(trainer.checkpoint(), out / "checkpoint.qsvlm");
  manifest.extra["steps"] = trainer.steps_done();
  manifest.extra["checkpoint_sha256"] = sha256_file(out / "checkpoint.qsvlm");
  finish_manifest(out, manifest);
  std::cout << "trained to step " << trainer.steps_done() << "; checkpoint " << (out / "checkpoint.qsvlm").string()
            << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string train_data;
  std::string task;
  std::string out;
  std::string config;
  std::string heatmap;
  std::optional<double> threshold_k;
  int64_t limit = 0;
  bool force = false;
};

json metrics_json(const ClassificationMetrics& m) {
  json per_class = json::array();
  for (double v : m.per_class_auc) per_class.push_back(std::isnan(v) ? json(nullptr) : json(v));
  return {{"accuracy", m.accuracy}, {"macro_auc", m.macro_auc}, {"per_class_auc", per_class}};
}

int cmd_eval(const EvalArgs& a, const Invocation& inv) {
  auto manifest = start_manifest(inv, a.out);
  auto config = read_config(a.config, &manifest);
  if (!a.heatmap.empty()) {
    if (a.heatmap == "cosine") {
      config.eval.grounding.mode = HeatmapMode::kCosine;
    } else if (a.heatmap == "attention") {
      config.eval.grounding.mode = HeatmapMode::kAttention;
    } else {
      throw UsageError("--heatmap must be cosine or attention");
    }
  }
  if (a.threshold_k) config.eval.grounding.threshold_k = *a.threshold_k;
  if (a.task == "probe" && a.train_data.empty()) throw UsageError("--task probe needs --train-data");
  if (!fs::is_regular_file(a.checkpoint)) throw UsageError("checkpoint not found: " + a.checkpoint);

  const auto ckpt = load_checkpoint(a.checkpoint);
  CorpusInfo info;
  auto samples = read_corpus(a.data, &info);
  check_corpus_matches(ckpt.config.encoder, info);
  if (a.limit > 0 && a.task != "ground" && static_cast<int64_t>(samples.size()) > a.limit) samples.resize(a.limit);
  auto model = model_from_checkpoint(ckpt);

  claim_output(a.out, a.force);
  write_config_copy(a.out, config);
  manifest.seed = ckpt.config.seed;
  manifest.corpus_hash = directory_hash(a.data, kCorpusHashExclude);
  manifest.extra["checkpoint"] = fs::absolute(a.checkpoint).lexically_normal().string();
  manifest.extra["checkpoint_sha256"] = sha256_file(a.checkpoint);
  manifest.extra["checkpoint_step"] = ckpt.step;

  const fs::path out(a.out);
  json report = {{"task", a.task}, {"checkpoint_step", ckpt.step}, {"samples", samples.size()}};
  std::ostringstream text;
  text << std::fixed << std::setprecision(4);

  if (a.task == "zeroshot") {
    std::vector<int> labels;
    for (const auto& s : samples) labels.push_back(s.class_label);
    const auto prompts = default_class_prompts();
    auto r = zero_shot_classify(model, stack_images(samples), labels, prompts);
    report["prompts"] = prompts;
    report["metrics"] = metrics_json(r.metrics);
    report["chance_accuracy"] = 1.0 / static_cast<double>(prompts.size());
    text << "zero-shot over " << samples.size() << " samples\n"
         << "accuracy   " << r.metrics.accuracy << "\nmacro_auc  " << r.metrics.macro_auc << '\n';
    for (size_t k = 0; k < prompts.size(); ++k) text << "  auc[" << prompts[k] << "] " << r.metrics.per_class_auc[k] << '\n';
  } else if (a.task == "ground") {
    const auto queries = grounding_queries(samples, a.limit);
    if (queries.empty()) throw InvalidArgument("corpus has no boxed sentences to ground");
    fs::create_directories(out / "overlays");
    json rows = json::array();
    std::vector<GroundingResult> results;
    double cnr_sum = 0.0;
    int64_t cnr_n = 0;
    for (const auto& q : queries) {
      const auto& s = samples[q.sample];
      const auto& sentence = s.sentences[q.sentence].text;
      const auto box = *s.sentence_box(q.sentence);
      auto r = ground_phrase(model, s.image(), sentence, box, config.eval.grounding);
      std::ostringstream name;
      name << std::setw(6) << std::setfill('0') << s.index << "_s" << q.sentence << "_" << slug(sentence) << ".png";
      write_overlay_png(out / "overlays" / name.str(), s, upsample_heatmap(r.heatmap, r.grid, r.image_size), box);
      json row = {{"sample", s.index}, {"sentence", sentence}, {"iou", r.iou}, {"overlay", "overlays/" + name.str()}};
      row["cnr"] = r.cnr ? json(*r.cnr) : json(nullptr);
      if (r.cnr) {
        cnr_sum += *r.cnr;
        ++cnr_n;
      }
      rows.push_back(row);
      results.push_back(std::move(r));
    }
    report["queries"] = rows;
    report["miou"] = miou(results);
    report["mean_cnr"] = cnr_n > 0 ? json(cnr_sum / static_cast<double>(cnr_n)) : json(nullptr);
    report["undefined_cnr"] = static_cast<int64_t>(results.size()) - cnr_n;
    report["threshold_k"] = config.eval.grounding.threshold_k;
    report["heatmap"] = config.eval.grounding.mode == HeatmapMode::kCosine ? "cosine" : "attention";
    text << "grounding over " << results.size() << " boxed sentences\nmiou      " << report["miou"].get<double>()
         << "\nmean_cnr  " << (cnr_n > 0 ? cnr_sum / static_cast<double>(cnr_n) : 0.0) << '\n';
  } else if (a.task == "probe") {
    const auto train_samples = read_corpus(a.train_data);
    json rows = json::array();
    text << "linear probe (macro AUC)\nfraction   auc\n";
    for (double f : config.eval.probe_fractions) {
      const double auc = linear_probe(model, train_samples, samples, f, config.eval.probe);
      rows.push_back({{"fraction", f}, {"auc", auc}});
      text << std::setw(8) << f << "  " << auc << '\n';
    }
    report["rows"] = rows;
    report["train_samples"] = train_samples.size();
  } else {
    throw UsageError("--task must be zeroshot, ground or probe");
  }

  write_text(out / "report.json", report.dump(2) + "\n");
  write_text(out / "report.txt", text.str());
  finish_manifest(out, manifest);
  std::cout << text.str();
  return 0;
}

// ---------------------------------------------------------------------------

struct AblateArgs {
  std::string config;
  std::string data;
  std::string held_out;
  std::string out;
  int64_t seeds = 1;
  std::optional<uint64_t> base_seed;
  std::optional<int64_t> steps;
  bool force = false;
};

json table_json(const AblationTable& t) {
  json rows = json::array();
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  for (const auto& r : t.rows) {
    json row = {{"scales", r.scales.label()},
                {"local", r.scales.local},
                {"instance", r.scales.instance},
                {"modality", r.scales.modality},
                {"probe_auc", opt(r.probe_auc)},
                {"zero_shot_auc", opt(r.zero_shot_auc)},
                {"zero_shot_accuracy", opt(r.zero_shot_accuracy)}};
    row["failure"] = r.failure.empty() ? json(nullptr) : json(r.failure);
    rows.push_back(row);
  }
  json j = {{"rows", rows}};
  j["seed"] = t.seed ? json(*t.seed) : json(nullptr);
  return j;
}

int cmd_ablate(const AblateArgs& a, const Invocation& inv) {
  if (a.seeds <= 0) throw UsageError("--seeds must be positive");
  auto manifest = start_manifest(inv, a.out);
  auto config = read_config(a.config, &manifest);
  if (a.steps) config.train.steps = *a.steps;
  const uint64_t base_seed = a.base_seed.value_or(config.train.seed);
  config.train.validate();

  CorpusInfo info;
  auto train_samples = read_corpus(a.data, &info);
  check_corpus_matches(config.train.encoder, info);
  std::vector<SyntheticSample> held_out;
  if (!a.held_out.empty()) {
    CorpusInfo held_info;
    held_out = read_corpus(a.held_out, &held_info);
    check_corpus_matches(config.train.encoder, held_info);
  } else {
    const auto n_held = static_cast<int64_t>(train_samples.size()) / 5;
    if (n_held < 1) throw InvalidArgument("corpus too small to split off a held-out set");
    held_out.assign(train_samples.end() - n_held, train_samples.end());
    train_samples.resize(train_samples.size() - static_cast<size_t>(n_held));
  }

  claim_output(a.out, a.force);
  write_config_copy(a.out, config);
  manifest.seed = base_seed;
  manifest.corpus_hash = directory_hash(a.data, kCorpusHashExclude);
  const fs::path out(a.out);

  std::vector<AblationTable> tables;
  int64_t failed = 0, total = 0;
  for (int64_t i = 0; i < a.seeds; ++i) {
    auto train_config = config.train;
    train_config.seed = base_seed + static_cast<uint64_t>(i);
    log_info("ablation seed " + std::to_string(train_config.seed));
    auto table = run_ablation(train_config, train_samples, held_out, config.eval);
    for (const auto& r : table.rows) {
      ++total;
      if (!r.failure.empty()) ++failed;
    }
    const auto stem = "table_seed" + std::to_string(train_config.seed);
    write_text(out / (stem + ".json"), table_json(table).dump(2) + "\n");
    write_text(out / (stem + ".txt"), format_table(table));
    std::cout << format_table(table) << '\n';
    tables.push_back(std::move(table));
  }
  const auto mean = mean_table(tables);
  write_text(out / "table_mean.json", table_json(mean).dump(2) + "\n");
  write_text(out / "table_mean.txt", format_table(mean));
  std::cout << format_table(mean);
  manifest.extra["seeds"] = a.seeds;
  manifest.extra["failed_rows"] = failed;
  finish_manifest(out, manifest);
  if (failed == total) throw Error("every ablation row failed");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-scale vision-language pretraining on a synthetic paired corpus"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "debug, info, warn, error or off")->capture_default_str();

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic image/report corpus");
  gen_cmd->add_option("--n", gen.n, "Number of samples")->required();
  gen_cmd->add_option("--seed", gen.seed, "Corpus seed")->capture_default_str();
  gen_cmd->add_option("--first-index", gen.first_index, "Index of the first sample")->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--config", gen.config, "Run config (JSON); its corpus section is used");
  gen_cmd->add_flag("--force", gen.force, "Replace a non-empty output directory");

  PretrainArgs pre;
  auto* pre_cmd = app.add_subcommand("pretrain", "Pretrain both towers with the multi-scale objective");
  pre_cmd->add_option("--config", pre.config, "Run config (JSON); defaults apply when omitted");
  pre_cmd->add_option("--data", pre.data, "Corpus directory")->required();
  pre_cmd->add_option("--out", pre.out, "Output directory")->required();
  pre_cmd->add_option("--resume", pre.resume, "Continue from this checkpoint");
  pre_cmd->add_option("--seed", pre.seed, "Override the training seed");
  pre_cmd->add_option("--steps", pre.steps, "Override the total step count");
  pre_cmd->add_option("--checkpoint-every", pre.checkpoint_every, "Also save intermediate checkpoints");
  pre_cmd->add_flag("--force", pre.force, "Replace a non-empty output directory");

  EvalArgs ev;
  auto* ev_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  ev_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  ev_cmd->add_option("--data", ev.data, "Evaluation corpus directory")->required();
  ev_cmd->add_option("--task", ev.task, "zeroshot, ground or probe")
      ->required()
      ->check(CLI::IsMember({"zeroshot", "ground", "probe"}));
  ev_cmd->add_option("--train-data", ev.train_data, "Labelled pool for the probe");
  ev_cmd->add_option("--out", ev.out, "Output directory")->required();
  ev_cmd->add_option("--config", ev.config, "Run config (JSON); its evaluation section is used");
  ev_cmd->add_option("--limit", ev.limit, "Cap on samples (queries for ground)");
  ev_cmd->add_option("--heatmap", ev.heatmap, "cosine or attention")->check(CLI::IsMember({"cosine", "attention"}));
  ev_cmd->add_option("--threshold-k", ev.threshold_k, "Region threshold in standard deviations above the mean");
  ev_cmd->add_flag("--force", ev.force, "Replace a non-empty output directory");

  AblateArgs ab;
  auto* ab_cmd = app.add_subcommand("ablate", "Train and score every combination of optional scales");
  ab_cmd->add_option("--config", ab.config, "Run config (JSON)");
  ab_cmd->add_option("--data", ab.data, "Training corpus directory")->required();
  ab_cmd->add_option("--held-out", ab.held_out, "Held-out corpus; defaults to the last fifth of --data");
  ab_cmd->add_option("--seeds", ab.seeds, "Number of seeds")->capture_default_str();
  ab_cmd->add_option("--seed", ab.base_seed, "First seed (default: the config's training seed)");
  ab_cmd->add_option("--steps", ab.steps, "Override the step count per row");
  ab_cmd->add_option("--out", ab.out, "Output directory")->required();
  ab_cmd->add_flag("--force", ab.force, "Replace a non-empty output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  Invocation inv;
  inv.arguments.assign(argv + 1, argv + argc);
  try {
    set_log_level(parse_log_level(log_level));
    configure_threads();
    if (gen_cmd->parsed()) return inv.command = "gen", cmd_gen(gen, inv);
    if (pre_cmd->parsed()) return inv.command = "pretrain", cmd_pretrain(pre, inv);
    if (ev_cmd->parsed()) return inv.command = "eval", cmd_eval(ev, inv);
    if (ab_cmd->parsed()) return inv.command = "ablate", cmd_ablate(ab, inv);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NonFiniteLoss& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
