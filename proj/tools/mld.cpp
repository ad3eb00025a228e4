/* Copyright 2026 The MLD Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License. */

// mld: synthetic lesion data, detector training, evaluation and comparison.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "mld/checkpoint.hpp"
#include "mld/config.hpp"
#include "mld/evaluation.hpp"
#include "mld/experiment.hpp"
#include "mld/io_error.hpp"
#include "mld/kernels.hpp"
#include "mld/synthdata.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Collects what a command did; written as run_manifest.json in its output dir.
class RunManifest {
 public:
  RunManifest(std::string command, std::vector<std::string> argv)
      : doc_({{"command", std::move(command)},
              {"argv", std::move(argv)},
              {"started_at", utc_now()},
              {"deterministic", mld::kernels::deterministic_mode()},
              {"kernels", std::string(mld::kernels::isa_name(mld::kernels::active().isa))},
              {"inputs", json::object()},
              {"outputs", json::object()}}) {}

  void set(const std::string& key, json value) { doc_[key] = std::move(value); }
  void input(const std::string& key, const fs::path& p) { doc_["inputs"][key] = p.string(); }
  void output(const fs::path& p) {
    doc_["outputs"][p.filename().string()] = {{"path", p.string()},
                                              {"sha1", mld::file_blob_hash(p)}};
  }
  void write(const fs::path& dir) {
    doc_["finished_at"] = utc_now();
    mld::write_file(dir / "run_manifest.json", doc_.dump(2) + "\n");
  }

 private:
  json doc_;
};

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw mld::IoError("cannot create " + dir.string() + ": " + ec.message());
}

void require_dataset(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json")) {
    throw mld::IoError("no dataset at " + dir.string() + " (missing manifest.json)");
  }
}

std::vector<double> parse_doubles(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
  return out;
}

// Defaults < config file < --set pairs < dedicated flags.
mld::RunConfig resolve_config(const std::string& config_file,
                              const std::vector<std::string>& sets, const mld::KeyValues& flags) {
  mld::KeyValues kv;
  if (!config_file.empty()) kv = mld::load_key_values(config_file);
  for (const std::string& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw mld::ValidationError("--set expects key=value, got " + s);
    kv[s.substr(0, eq)] = s.substr(eq + 1);
  }
  for (const auto& [k, v] : flags) kv[k] = v;
  return mld::apply_key_values(kv);
}

struct SplitSamples {
  std::vector<mld::Sample> train, val;
};

SplitSamples load_split(const fs::path& data, const mld::SplitConfig& split) {
  const mld::DatasetManifest m = mld::read_manifest(data);
  auto [train_ids, val_ids] =
      mld::split_dataset(m.image_ids, split.train_parts, split.val_parts, split.seed);
  SplitSamples s;
  s.train = mld::load_samples(data, train_ids);
  s.val = mld::load_samples(data, val_ids);
  return s;
}

struct Common {
  std::vector<std::string> argv;
};

int cmd_gen_data(const fs::path& out, std::size_t images, int size, std::uint64_t seed,
                 const std::string& ratios, double factor, int min_count, int max_count,
                 const Common& common) {
  mld::SynthConfig cfg;
  cfg.image_size = size;
  cfg.seed = seed;
  cfg.box_context_factor = factor;
  cfg.min_count.fill(min_count);
  cfg.max_count.fill(max_count);
  if (!ratios.empty()) {
    const auto r = parse_doubles(ratios);
    if (r.size() != mld::kNumCategories) {
      throw mld::ValidationError("--ratios needs 4 comma-separated values");
    }
    std::copy(r.begin(), r.end(), cfg.area_ratio.begin());
  }
  cfg.validate();
  RunManifest manifest("gen-data", common.argv);
  manifest.set("config", mld::to_json(cfg));
  manifest.set("seed", seed);
  const mld::DatasetManifest m = mld::write_dataset(out, cfg, images);
  manifest.output(out / "annotations.jsonl");
  manifest.output(out / "manifest.json");
  manifest.write(out);
  std::cout << "wrote " << m.image_ids.size() << " images to " << out.string() << '\n';
  return 0;
}

int cmd_train(const fs::path& data, const fs::path& out, const mld::RunConfig& cfg,
              const Common& common) {
  require_dataset(data);
  ensure_dir(out);
  RunManifest manifest("train", common.argv);
  manifest.input("data", data);
  const mld::KeyValues snapshot = mld::to_key_values(cfg);
  manifest.set("config", mld::to_json(snapshot));
  manifest.set("seed", cfg.train.seed);

  const SplitSamples split = load_split(data, cfg.split);
  std::cerr << "training " << mld::method_name(cfg) << " on " << split.train.size()
            << " images (" << split.val.size() << " held out)\n";
  mld::Detector model(cfg.detector, cfg.train.seed);
  const mld::TrainResult result =
      mld::train(model, split.train, cfg.train, [](const mld::EpochMetrics& m) {
        std::cerr << "epoch " << m.epoch << " total " << m.total << " (rpn " << m.rpn_cls
                  << " + " << m.rpn_reg << ", head " << m.head_cls << " + " << m.head_reg
                  << ")\n";
      });

  {
    std::ofstream csv(out / "metrics.csv");
    mld::write_metrics_csv(csv, result.epochs);
    if (!csv) throw mld::IoError("error writing " + (out / "metrics.csv").string());
  }
  {
    std::ofstream kv(out / "config.txt");
    mld::write_key_values(kv, snapshot);
  }
  const fs::path ckpt = out / "model.ckpt";
  mld::save_checkpoint(ckpt, model, {{"config", mld::to_json(snapshot)}, {"method", mld::method_name(cfg)}});
  manifest.output(ckpt);
  manifest.output(out / "metrics.csv");
  manifest.output(out / "config.txt");
  manifest.set("checkpoint_hash", mld::file_blob_hash(ckpt));
  manifest.write(out);
  std::cout << "checkpoint " << ckpt.string() << '\n';
  return 0;
}

int cmd_eval(const fs::path& model_path, const fs::path& data, const std::string& criterion_name,
             int max_dets, double score_thresh, const std::string& split_name,
             const std::string& config_file, const fs::path& out, const Common& common) {
  require_dataset(data);
  ensure_dir(out);
  const mld::CheckpointData ckpt = mld::load_checkpoint(model_path);
  if (!ckpt.manifest.contains("config")) {
    throw mld::ValidationError("checkpoint has no configuration snapshot");
  }
  const mld::KeyValues saved = mld::key_values_from_json(ckpt.manifest.at("config"));
  mld::KeyValues kv = saved;
  if (!config_file.empty()) {
    for (const auto& [k, v] : mld::load_key_values(config_file)) {
      const bool structural = k.rfind("train.", 0) != 0 && k.rfind("split.", 0) != 0 &&
                              k != "head.score_threshold" && k != "head.max_detections" &&
                              k != "head.nms_threshold" && k != "rpn.post_nms_top_n" &&
                              k != "rpn.pre_nms_top_k";
      const auto it = saved.find(k);
      if (structural && it != saved.end() &&
          mld::to_key_values(mld::apply_key_values({{k, v}})).at(k) !=
              mld::to_key_values(mld::apply_key_values({{k, it->second}})).at(k)) {
        throw mld::ValidationError("checkpoint/config mismatch: '" + k + "' is " + it->second +
                                   " in the checkpoint but " + v + " in " + config_file);
      }
      kv[k] = v;
    }
  }
  kv["head.max_detections"] = std::to_string(max_dets);
  kv["head.score_threshold"] = std::to_string(score_thresh);
  const mld::RunConfig cfg = mld::apply_key_values(kv);
  mld::Detector model(cfg.detector, 0);
  mld::restore_parameters(model, ckpt.tensors);

  std::vector<mld::Sample> samples;
  if (split_name == "all") {
    samples = mld::load_samples(data);
  } else {
    SplitSamples s = load_split(data, cfg.split);
    samples = split_name == "train" ? std::move(s.train) : std::move(s.val);
  }

  RunManifest manifest("eval", common.argv);
  manifest.input("model", model_path);
  manifest.input("data", data);
  manifest.set("config", mld::to_json(mld::to_key_values(cfg)));
  manifest.set("checkpoint_hash", mld::file_blob_hash(model_path));

  std::vector<mld::Detection> dets;
  std::vector<mld::Annotation> gts;
  for (const mld::Sample& s : samples) {
    for (auto& d : model.detect(s.image, s.image_id)) dets.push_back(std::move(d));
    gts.insert(gts.end(), s.annotations.begin(), s.annotations.end());
  }
  {
    std::ofstream os(out / "detections.jsonl");
    mld::write_detections_jsonl(os, dets);
    if (!os) throw mld::IoError("error writing " + (out / "detections.jsonl").string());
  }
  const auto thresholds = mld::default_iou_thresholds();
  mld::EvalReport report =
      mld::evaluate(ckpt.manifest.value("method", mld::method_name(cfg)), dets, gts,
                    mld::parse_criterion(criterion_name), thresholds);
  report.config = mld::to_json(mld::to_key_values(cfg));
  mld::emit_report(out, report);
  for (const char* f : {"detections.jsonl", "report.json", "report.csv", "recall_curve.svg"}) {
    manifest.output(out / f);
  }
  manifest.write(out);
  const std::span<const mld::EvalReport> one(&report, 1);
  mld::write_sensitivity_csv(std::cout, one);
  return 0;
}

int cmd_plot(const std::vector<std::string>& reports, const fs::path& out, const Common& common) {
  std::vector<mld::EvalReport> loaded;
  for (const std::string& r : reports) loaded.push_back(mld::read_report(r));
  std::ostringstream svg;
  mld::write_recall_svg(svg, loaded);
  if (out.has_parent_path()) ensure_dir(out.parent_path());
  mld::write_file(out, svg.str());
  RunManifest manifest("plot", common.argv);
  for (std::size_t i = 0; i < reports.size(); ++i) {
    manifest.input("report" + std::to_string(i), reports[i]);
  }
  manifest.output(out);
  manifest.write(out.has_parent_path() ? out.parent_path() : fs::path("."));
  return 0;
}

int cmd_compare(const fs::path& data, const std::vector<std::string>& configs,
                const std::string& base_config, const std::vector<std::string>& sets,
                const std::vector<std::uint64_t>& seeds, const std::string& criterion_name,
                const fs::path& out, const Common& common) {
  require_dataset(data);
  ensure_dir(out);
  const mld::RunConfig base = resolve_config(base_config, sets, {});
  std::vector<mld::RunConfig> runs;
  if (configs.empty()) {
    runs = mld::architecture_grid(base);
  } else {
    for (const std::string& c : configs) {
      mld::KeyValues kv = mld::to_key_values(base);
      for (const auto& [k, v] : mld::load_key_values(c)) kv[k] = v;
      runs.push_back(mld::apply_key_values(kv));
    }
  }
  RunManifest manifest("compare", common.argv);
  manifest.input("data", data);
  manifest.set("config", mld::to_json(mld::to_key_values(base)));
  manifest.set("seeds", seeds);

  const SplitSamples split = load_split(data, base.split);
  std::ofstream runs_log(out / "runs.jsonl");
  const mld::Comparison cmp = mld::run_comparison(
      split.train, split.val, runs, seeds, mld::parse_criterion(criterion_name),
      [&runs_log](const mld::RunOutcome& r) {
        std::cerr << "finished " << r.method << " seed " << r.seed << '\n';
        runs_log << json({{"method", r.method}, {"seed", r.seed}, {"report", mld::to_json(r.report)}})
                        .dump()
                 << '\n';
        runs_log.flush();
      });
  runs_log.close();
  {
    std::ofstream csv(out / "comparison.csv");
    mld::write_sensitivity_csv(csv, cmp.methods);
  }
  {
    std::ofstream svg(out / "recall_curve.svg");
    mld::write_recall_svg(svg, cmp.methods);
  }
  {
    std::ofstream trends(out / "trends.txt");
    for (const mld::TrendCheck& t : cmp.trends) {
      trends << (t.holds ? "holds    " : "VIOLATED ") << t.description << '\n';
    }
  }
  for (const char* f : {"comparison.csv", "recall_curve.svg", "trends.txt", "runs.jsonl"}) {
    manifest.output(out / f);
  }
  manifest.write(out);
  mld::write_sensitivity_csv(std::cout, cmp.methods);
  for (const mld::TrendCheck& t : cmp.trends) {
    if (!t.holds) std::cerr << "trend violated: " << t.description << '\n';
  }
  return 0;
}

}  // namespace

int run(int argc, char** argv);

int main(int argc, char** argv) { return run(argc, argv); }

int run(int argc, char** argv) {
  CLI::App app{"Mini-lesion detection: synthetic data, training, evaluation"};
  app.require_subcommand(1);
  Common common;
  for (int i = 0; i < argc; ++i) common.argv.emplace_back(argv[i]);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic lesion dataset");
  std::string gen_out;
  std::size_t gen_images = 250;
  int gen_size = 128, gen_min = 1, gen_max = 8;
  std::uint64_t gen_seed = 0;
  std::string gen_ratios;
  double gen_factor = 2.0;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--images", gen_images, "Number of images");
  gen->add_option("--size", gen_size, "Image side in pixels (multiple of 32)");
  gen->add_option("--seed", gen_seed, "Generator seed");
  gen->add_option("--ratios", gen_ratios, "Four lesion/image area ratios, comma-separated");
  gen->add_option("--context-factor", gen_factor, "Box area / lesion area");
  gen->add_option("--min-count", gen_min, "Minimum lesions per category per image");
  gen->add_option("--max-count", gen_max, "Maximum lesions per category per image");

  // train
  auto* tr = app.add_subcommand("train", "Train a detector");
  std::string tr_data, tr_out, tr_config, tr_arch, tr_cf;
  std::vector<std::string> tr_sets;
  int tr_epochs = -1;
  std::uint64_t tr_seed = 0;
  tr->add_option("--data", tr_data, "Dataset directory")->required();
  tr->add_option("--out", tr_out, "Output directory")->required();
  tr->add_option("--arch", tr_arch, "Architecture")->check(CLI::IsMember({"plain", "fpn", "lfpn"}));
  tr->add_option("--cf-proposal", tr_cf, "Centre-focus anchor assignment")
      ->check(CLI::IsMember({"on", "off"}));
  tr->add_option("--config", tr_config, "key=value configuration file");
  tr->add_option("--set", tr_sets, "Override a configuration key (key=value)");
  auto* tr_epochs_opt = tr->add_option("--epochs", tr_epochs, "Training epochs");
  auto* tr_seed_opt = tr->add_option("--seed", tr_seed, "Seed for init and data order");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string ev_model, ev_data, ev_out, ev_criterion = "cf", ev_split = "val", ev_config;
  int ev_max = 100;
  double ev_thresh = 0.1;
  ev->add_option("--model", ev_model, "Checkpoint file")->required();
  ev->add_option("--data", ev_data, "Dataset directory")->required();
  ev->add_option("--out", ev_out, "Output directory")->required();
  ev->add_option("--criterion", ev_criterion, "Matching criterion")
      ->check(CLI::IsMember({"cf", "iou"}));
  ev->add_option("--max-dets", ev_max, "Detections kept per image");
  ev->add_option("--score-thresh", ev_thresh, "Minimum detection score");
  ev->add_option("--split", ev_split, "Images to evaluate")
      ->check(CLI::IsMember({"val", "train", "all"}));
  ev->add_option("--config", ev_config, "Configuration the checkpoint must match");

  // plot
  auto* pl = app.add_subcommand("plot", "Overlay recall-vs-IoU curves of several reports");
  std::vector<std::string> pl_reports;
  std::string pl_out;
  pl->add_option("--reports", pl_reports, "report.json files")->required();
  pl->add_option("--out", pl_out, "Output SVG")->required();

  // compare
  auto* cmp = app.add_subcommand("compare", "Train and compare architectures over seeds");
  std::string cmp_data, cmp_out, cmp_config, cmp_criterion = "cf";
  std::vector<std::string> cmp_configs, cmp_sets;
  std::vector<std::uint64_t> cmp_seeds = {0, 1, 2};
  cmp->add_option("--data", cmp_data, "Dataset directory")->required();
  cmp->add_option("--out", cmp_out, "Output directory")->required();
  cmp->add_option("--config", cmp_config, "Base configuration file");
  cmp->add_option("--configs", cmp_configs,
                  "Per-method configuration files (default: the six arch x cf settings)");
  cmp->add_option("--set", cmp_sets, "Override a base configuration key (key=value)");
  cmp->add_option("--seeds", cmp_seeds, "Seeds per configuration")->delimiter(',');
  cmp->add_option("--criterion", cmp_criterion, "Matching criterion")
      ->check(CLI::IsMember({"cf", "iou"}));

  // replay
  auto* rp = app.add_subcommand("replay", "Re-run the command recorded in a run manifest");
  std::string rp_manifest;
  rp->add_option("--manifest", rp_manifest, "run_manifest.json")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      return cmd_gen_data(gen_out, gen_images, gen_size, gen_seed, gen_ratios, gen_factor,
                          gen_min, gen_max, common);
    }
    if (tr->parsed()) {
      mld::KeyValues flags;
      if (!tr_arch.empty()) flags["arch"] = tr_arch;
      if (!tr_cf.empty()) flags["cf_proposal"] = tr_cf;
      if (*tr_epochs_opt) flags["train.epochs"] = std::to_string(tr_epochs);
      if (*tr_seed_opt) flags["train.seed"] = std::to_string(tr_seed);
      return cmd_train(tr_data, tr_out, resolve_config(tr_config, tr_sets, flags), common);
    }
    if (ev->parsed()) {
      return cmd_eval(ev_model, ev_data, ev_criterion, ev_max, ev_thresh, ev_split, ev_config,
                      ev_out, common);
    }
    if (pl->parsed()) return cmd_plot(pl_reports, pl_out, common);
    if (cmp->parsed()) {
      return cmd_compare(cmp_data, cmp_configs, cmp_config, cmp_sets, cmp_seeds, cmp_criterion,
                         cmp_out, common);
    }
    if (rp->parsed()) {
      const json m = json::parse(mld::read_file(rp_manifest));
      std::vector<std::string> args = m.at("argv").get<std::vector<std::string>>();
      if (args.size() > 1 && args[1] == "replay") {
        throw mld::ValidationError("manifest records a replay; refusing to recurse");
      }
      std::vector<char*> ptrs;
      for (std::string& a : args) ptrs.push_back(a.data());
      return run(static_cast<int>(ptrs.size()), ptrs.data());
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
