/* Copyright (c) 2026 fsdet Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License. */

// Command-line front end: data preparation, the two training phases,
// evaluation grids, synthetic data generation and figure rendering.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "fsdet/config.hpp"
#include "fsdet/evaluation.hpp"
#include "fsdet/render.hpp"
#include "fsdet/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fsdet;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitRuntime = 3;

DatasetIndex load_dataset(const RunConfig& cfg) {
  if (cfg.dataset_root.empty())
    throw ConfigError("dataset_root is required");
  if (cfg.format == "canonical") {
    std::string index_path =
        (fs::path(cfg.dataset_root) / "index.tsv").string();
    return read_index(index_path, cfg.dataset_root);
  }
  std::vector<ParseIssue> issues;
  DatasetIndex index = parse_annotations(
      cfg.dataset_root, parse_format_tag(cfg.format), &issues);
  for (const auto& issue : issues)
    std::cerr << "warning: " << issue.file << ':' << issue.line << ": "
              << issue.message << '\n';
  return index;
}

std::vector<int> novel_ids(const RunConfig& cfg, const DatasetIndex& index) {
  std::vector<int> ids;
  for (const auto& name : cfg.novel_classes) {
    int id = index.class_id_of(name);
    if (id < 0) throw ConfigError("unknown novel class: " + name);
    ids.push_back(id);
  }
  if (ids.empty()) throw ConfigError("at least one novel class is required");
  return ids;
}

TrainConfig base_train_config(const RunConfig& cfg) {
  TrainConfig t;
  t.phase = Phase::kBase;
  t.fusion = parse_fusion_mode(cfg.fusion);
  t.detector_kind = cfg.detector;
  t.steps = cfg.steps_base;
  t.lr = cfg.lr;
  t.momentum = cfg.momentum;
  t.grad_clip = cfg.grad_clip;
  t.rois_per_image = cfg.rois_per_image;
  t.rpn_batch = cfg.rpn_batch;
  t.seed = derive_seed(cfg.seed, "phase1");
  t.config_hash = config_hash(cfg);
  t.out_dir = resolve_out_dir(cfg);
  return t;
}

TrainConfig tune_train_config(const RunConfig& cfg) {
  TrainConfig t = base_train_config(cfg);
  t.phase = Phase::kFinetune;
  t.steps = cfg.steps_finetune;
  t.lr = cfg.lr * cfg.finetune_lr_scale;
  t.budget = ShotBudget{cfg.k, cfg.rho};
  t.seed = derive_seed(cfg.seed, "phase2");
  return t;
}

void write_config_stamp(const RunConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::ofstream out(fs::path(out_dir) / "config.json", std::ios::binary);
  out << run_config_json(cfg) << '\n';
}

InferenceSettings inference_settings(const RunConfig& cfg) {
  InferenceSettings s;
  s.score_thresh = cfg.score_thresh;
  return s;
}

CheckpointMeta make_meta(const RunConfig& cfg, const FewShotModel& model,
                         const DatasetIndex& index, const std::string& phase,
                         long steps) {
  CheckpointMeta meta;
  meta.class_ids = model.class_ids;
  for (int c : model.class_ids) meta.class_names.push_back(index.classes()[c]);
  meta.feature_dim = model.detector.cfg.feature_dim;
  meta.phase = phase;
  meta.detector_kind = cfg.detector;
  meta.fusion = fusion_mode_name(model.fusion);
  meta.config_hash = config_hash(cfg);
  meta.seed = cfg.seed;
  meta.steps = steps;
  meta.k = cfg.k;
  meta.rho = cfg.rho == ShotBudget::kInfinite ? "inf" : std::to_string(cfg.rho);
  return meta;
}

// ---- subcommands ----

int cmd_prepare(const RunConfig& cfg) {
  DatasetIndex index = load_dataset(cfg);
  SplitSpec split = make_split(index, novel_ids(cfg, index),
                               cfg.train_fraction,
                               derive_seed(cfg.seed, "split"));
  FinetuneSet set = sample_finetune_set(index, split,
                                        ShotBudget{cfg.k, cfg.rho},
                                        derive_seed(cfg.seed, "shots"));
  std::string out = resolve_out_dir(cfg);
  write_config_stamp(cfg, out);
  write_index(index, (fs::path(out) / "index.tsv").string());
  write_split(split, index, (fs::path(out) / "split.tsv").string());
  write_finetune_set(set, index, (fs::path(out) / "finetune.tsv").string());
  std::cout << "prepared " << index.images().size() << " images, "
            << index.annotations().size() << " annotations; manifests in "
            << out << '\n';
  return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& phase,
              const std::string& base_checkpoint) {
  DatasetIndex index = load_dataset(cfg);
  SplitSpec split = make_split(index, novel_ids(cfg, index),
                               cfg.train_fraction,
                               derive_seed(cfg.seed, "split"));
  std::string out = resolve_out_dir(cfg);
  write_config_stamp(cfg, out);

  TrainConfig base = base_train_config(cfg);
  TrainConfig tune = tune_train_config(cfg);
  TrainResult result;
  FewShotModel model;
  long steps = 0;
  std::string stem;

  if (phase == "base") {
    model = train_base(index, split, base, &result);
    steps = base.steps;
    stem = "ckpt_base_" + cfg.fusion;
  } else if (phase == "finetune") {
    if (base_checkpoint.empty())
      throw ConfigError("--phase finetune requires --checkpoint from a "
                        "completed base phase");
    CheckpointMeta meta;
    model = load_checkpoint(base_checkpoint, &meta);
    FinetuneSet set = sample_finetune_set(index, split, tune.budget,
                                          derive_seed(cfg.seed, "shots"));
    write_finetune_set(set, index, (fs::path(out) / "finetune.tsv").string());
    finetune_novel(model, index, split, set, tune, &result);
    steps = meta.steps + tune.steps;
    stem = "ckpt_" + cfg.fusion + "_k" + std::to_string(cfg.k);
  } else if (phase == "joint") {
    model = train_baseline(index, split, BaselineMode::kJoint, base, tune,
                           &result);
    steps = base.steps;
    stem = "ckpt_frcn-joint_k" + std::to_string(cfg.k);
  } else if (phase == "full") {
    // both phases back to back; fusion=none gives the FRCN-ft baseline
    model = train_base(index, split, base, &result);
    FinetuneSet set = sample_finetune_set(index, split, tune.budget,
                                          derive_seed(cfg.seed, "shots"));
    write_finetune_set(set, index, (fs::path(out) / "finetune.tsv").string());
    finetune_novel(model, index, split, set, tune, &result);
    steps = base.steps + tune.steps;
    stem = "ckpt_" + cfg.fusion + "_k" + std::to_string(cfg.k);
  } else {
    throw ConfigError("--phase must be base, finetune, joint or full");
  }

  std::string ckpt = (fs::path(out) / (stem + ".bin")).string();
  save_checkpoint(ckpt, model, make_meta(cfg, model, index, phase, steps));
  write_loss_log((fs::path(out) / (stem + ".loss.tsv")).string(),
                 result.losses, config_hash(cfg), cfg.seed);
  std::cout << "trained phase " << phase << "; checkpoint at " << ckpt << '\n';
  return 0;
}

int cmd_eval_single(const RunConfig& cfg, const std::string& checkpoint,
                    bool render) {
  DatasetIndex index = load_dataset(cfg);
  CheckpointMeta meta;
  FewShotModel model = load_checkpoint(checkpoint, &meta);
  SplitSpec split = make_split(index, novel_ids(cfg, index),
                               cfg.train_fraction,
                               derive_seed(cfg.seed, "split"));
  std::vector<long> test(split.test_images.begin(), split.test_images.end());

  SupportFeatureBank bank;
  bool with_bank = model.fusion != FusionMode::kNone;
  if (with_bank) {
    FinetuneSet set = sample_finetune_set(index, split,
                                          ShotBudget{cfg.k, cfg.rho},
                                          derive_seed(cfg.seed, "shots"));
    bank = build_support_bank(model, index, finetune_support_pool(index, set));
  }
  EvalReport report = evaluate_model(model, index, test,
                                     with_bank ? &bank : nullptr,
                                     inference_settings(cfg), cfg.iou_thresh,
                                     parse_ap_mode(cfg.ap_mode));

  std::string out = resolve_out_dir(cfg);
  fs::create_directories(out);
  json j;
  j["config_hash"] = config_hash(cfg);
  j["checkpoint"] = checkpoint;
  j["images"] = report.images;
  j["iou_thresh"] = report.iou_thresh;
  json ap = json::object(), pr = json::object();
  for (const auto& [cls, v] : report.ap_by_class) {
    ap[index.classes()[cls]] = v;
    json curve = json::array();
    for (const auto& [r, p] : report.pr_by_class[cls])
      curve.push_back({r, p});
    pr[index.classes()[cls]] = curve;
  }
  j["ap"] = ap;
  j["pr_curves"] = pr;
  j["novel_map"] = report.mean_ap(split.classes.novel);
  std::ofstream rf(fs::path(out) / "report.json", std::ios::binary);
  rf << j.dump(2) << '\n';

  std::cout << "evaluated " << report.images << " images; novel mAP@"
            << cfg.iou_thresh << " = " << j["novel_map"] << '\n';

  if (render) {
    std::map<long, std::vector<DetectionResult>> dets;
    ImageCache cache(index);
    for (long id : test)
      dets[id] = detect_image(model, cache.get(id),
                              with_bank ? &bank : nullptr,
                              inference_settings(cfg));
    auto files = render_overlays(index, dets,
                                 (fs::path(out) / "figures").string());
    std::cout << "wrote " << files.size() << " overlays\n";
  }
  return 0;
}

int cmd_eval_grid(const RunConfig& cfg, const std::string& preset,
                  std::vector<std::string> methods, std::vector<int> ks,
                  bool render) {
  DatasetIndex index = load_dataset(cfg);

  GridSpec spec;
  if (!methods.empty()) spec.methods = methods;
  else spec.methods = {cfg.fusion == "none" ? "frcn-ft" : cfg.fusion};
  if (!ks.empty()) spec.ks = ks;
  spec.rhos = {cfg.rho};
  spec.train_fraction = cfg.train_fraction;
  spec.split_seed = derive_seed(cfg.seed, "split");
  spec.base_cfg = base_train_config(cfg);
  spec.tune_cfg = tune_train_config(cfg);
  spec.inference = inference_settings(cfg);
  spec.iou_thresh = cfg.iou_thresh;

  SplitSpec split;
  if (preset == "rsod" || preset == "each-novel") {
    // every class takes one turn as the novel class
    for (size_t c = 0; c < index.classes().size(); ++c)
      spec.novel_choices.push_back({static_cast<int>(c)});
  } else if (preset == "proportion") {
    spec.rhos = {0, 1, 2, 3, 5, ShotBudget::kInfinite};
    split = make_split(index, novel_ids(cfg, index), cfg.train_fraction,
                       spec.split_seed);
  } else if (preset.empty() || preset == "single") {
    split = make_split(index, novel_ids(cfg, index), cfg.train_fraction,
                       spec.split_seed);
  } else {
    throw ConfigError("unknown grid preset: " + preset);
  }

  std::vector<GridCell> cells = run_experiment_grid(index, split, spec);
  std::string out = resolve_out_dir(cfg);
  fs::create_directories(out);
  write_config_stamp(cfg, out);
  write_results_csv((fs::path(out) / "results.csv").string(), cells, index);
  write_results_jsonl((fs::path(out) / "results.jsonl").string(), cells,
                      index);
  int failed = 0;
  for (const auto& cell : cells)
    if (!cell.ok()) ++failed;
  std::cout << "grid complete: " << cells.size() << " cells, " << failed
            << " failed; results in " << out << '\n';
  if (render)
    render_ap_histograms(cells, index, (fs::path(out) / "figures").string());
  return 0;
}

int cmd_synth(const RunConfig& cfg, int classes, int images, int size) {
  SynthConfig sc;
  sc.num_classes = classes;
  sc.num_images = images;
  sc.image_size = size;
  sc.seed = derive_seed(cfg.seed, "synth");
  std::string out = resolve_out_dir(cfg);
  DatasetIndex index = generate_synthetic_dataset(sc, out);
  std::cout << "generated " << index.images().size() << " images with "
            << index.annotations().size() << " annotations in " << out << '\n';
  return 0;
}

int cmd_crop_supports(const RunConfig& cfg, int target_size) {
  DatasetIndex index = load_dataset(cfg);
  std::string out = resolve_out_dir(cfg);
  fs::create_directories(out);
  ImageCache cache(index);
  int written = 0;
  for (const auto& ann : index.annotations()) {
    SupportImage crop = make_support_crop(index, ann, target_size, &cache);
    std::string name = "support_" + index.classes()[ann.class_id] + "_" +
                       std::to_string(ann.id) + ".ppm";
    write_ppm(crop.pixels, (fs::path(out) / name).string());
    ++written;
  }
  std::cout << "wrote " << written << " support crops to " << out << '\n';
  return 0;
}

int cmd_report(const RunConfig& cfg, const std::string& results_path) {
  DatasetIndex index = load_dataset(cfg);
  std::vector<GridCell> cells = read_results_jsonl(results_path, index);
  std::string out = resolve_out_dir(cfg);
  auto files = render_ap_histograms(cells, index,
                                    (fs::path(out) / "figures").string());
  std::cout << "rendered " << files.size() << " histograms\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"few-shot remote-sensing object detection"};
  app.require_subcommand(1);

  RunConfig cfg;
  std::string config_file;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_file, "JSON config file");
    sub->add_option("--root", cfg.dataset_root, "dataset root directory");
    sub->add_option("--format", cfg.format, "canonical | voc | nwpu");
    sub->add_option("--novel", cfg.novel_classes, "novel class names");
    sub->add_option("--train-fraction", cfg.train_fraction, "");
    sub->add_option("--k", cfg.k, "shots per novel class");
    sub->add_option("--rho", cfg.rho, "base:novel proportion, -1 = all");
    sub->add_option("--detector", cfg.detector, "tiny | full");
    sub->add_option("--fusion", cfg.fusion, "gru | xcorr | none");
    sub->add_option("--lr", cfg.lr, "");
    sub->add_option("--steps-base", cfg.steps_base, "");
    sub->add_option("--steps-finetune", cfg.steps_finetune, "");
    sub->add_option("--seed", cfg.seed, "root seed");
    sub->add_option("--out", cfg.out_dir, "output directory");
    sub->add_option("--ap-mode", cfg.ap_mode, "all-point | 11-point");
    sub->add_option("--iou", cfg.iou_thresh, "matching IoU threshold");
  };

  CLI::App* prepare = app.add_subcommand("prepare", "write data manifests");
  add_common(prepare);

  CLI::App* train = app.add_subcommand("train", "run the training phases");
  std::string phase = "full";
  std::string train_checkpoint;
  add_common(train);
  train->add_option("--phase", phase, "base | finetune | joint | full");
  train->add_option("--checkpoint", train_checkpoint,
                    "base checkpoint (required for --phase finetune)");

  CLI::App* eval = app.add_subcommand("eval", "evaluate or run a grid");
  std::string checkpoint, grid_preset;
  std::vector<std::string> grid_methods;
  std::vector<int> grid_ks;
  bool render = false;
  add_common(eval);
  eval->add_option("--checkpoint", checkpoint, "checkpoint to evaluate");
  eval->add_option("--grid", grid_preset,
                   "experiment grid preset: single | rsod | proportion")
      ->expected(0, 1)
      ->default_str("single");
  eval->add_option("--methods", grid_methods, "grid methods");
  eval->add_option("--ks", grid_ks, "grid shot counts");
  eval->add_flag("--render", render, "render figures");

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  int synth_classes = 3, synth_images = 100, synth_size = 96;
  add_common(synth);
  synth->add_option("--classes", synth_classes, "shape classes (2-5)");
  synth->add_option("--images", synth_images, "");
  synth->add_option("--size", synth_size, "square image size");

  CLI::App* crop = app.add_subcommand("crop-supports",
                                      "dump support crops for inspection");
  int crop_size = 64;
  add_common(crop);
  crop->add_option("--size", crop_size, "crop target size");

  CLI::App* report = app.add_subcommand("report",
                                        "re-render figures from results");
  std::string results_path;
  add_common(report);
  report->add_option("--results", results_path, "results.jsonl path")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (!config_file.empty()) {
      // file first, then flags re-applied on top
      RunConfig from_file = load_run_config(config_file);
      std::swap(cfg, from_file);
      app.clear();
      app.parse(argc, argv);
    }
    validate_run_config(cfg);

    if (*prepare) return cmd_prepare(cfg);
    if (*train) return cmd_train(cfg, phase, train_checkpoint);
    if (*eval) {
      if (eval->count("--grid"))
        return cmd_eval_grid(cfg, grid_preset, grid_methods, grid_ks, render);
      if (checkpoint.empty())
        throw ConfigError("eval needs --checkpoint or --grid");
      return cmd_eval_single(cfg, checkpoint, render);
    }
    if (*synth) return cmd_synth(cfg, synth_classes, synth_images, synth_size);
    if (*crop) return cmd_crop_supports(cfg, crop_size);
    if (*report) return cmd_report(cfg, results_path);
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ValidationError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}
