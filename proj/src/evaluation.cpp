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

#include "fsdet/evaluation.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "fsdet/rng.hpp"

using nlohmann::json;

namespace fsdet {

ApMode parse_ap_mode(const std::string& s) {
  if (s == "all-point" || s == "all") return ApMode::kAllPoint;
  if (s == "11-point" || s == "eleven") return ApMode::kElevenPoint;
  throw EvalError("unknown AP mode: " + s);
}

double compute_ap(std::vector<ScoredDet> dets,
                  const std::vector<GtInstance>& gts, double iou_thresh,
                  ApMode mode, PrCurve* curve) {
  int npos = 0;
  for (const auto& g : gts)
    if (!g.ignore) ++npos;
  if (npos == 0)
    throw EvalError("average precision is undefined without ground truth");

  std::vector<size_t> order(dets.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return dets[a].score > dets[b].score;
  });

  std::vector<bool> used(gts.size(), false);
  std::vector<int> flags;  // 1 = tp, 0 = fp; ignored dets leave no entry
  flags.reserve(dets.size());
  for (size_t oi : order) {
    const ScoredDet& d = dets[oi];
    double best_active = 0, best_ignore = 0;
    int arg = -1;
    for (size_t g = 0; g < gts.size(); ++g) {
      if (gts[g].image_id != d.image_id) continue;
      double v = iou(d.box, gts[g].box);
      if (gts[g].ignore) {
        best_ignore = std::max(best_ignore, v);
      } else if (!used[g] && v > best_active) {
        best_active = v;
        arg = static_cast<int>(g);
      }
    }
    if (arg >= 0 && best_active >= iou_thresh) {
      used[arg] = true;
      flags.push_back(1);
    } else if (best_ignore >= iou_thresh) {
      continue;  // overlaps an ignore region only
    } else {
      flags.push_back(0);
    }
  }

  std::vector<double> precision(flags.size()), recall(flags.size());
  int tp = 0;
  for (size_t i = 0; i < flags.size(); ++i) {
    tp += flags[i];
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / npos;
  }
  if (curve) {
    curve->clear();
    for (size_t i = 0; i < flags.size(); ++i)
      curve->emplace_back(recall[i], precision[i]);
  }

  if (mode == ApMode::kElevenPoint) {
    double sum = 0;
    for (int j = 0; j <= 10; ++j) {
      double r = j / 10.0;
      double best = 0;
      for (size_t i = 0; i < flags.size(); ++i)
        if (recall[i] >= r) best = std::max(best, precision[i]);
      sum += best;
    }
    return sum / 11.0;
  }

  // all-point: integrate the monotone precision envelope over recall
  for (size_t i = precision.size(); i-- > 1;)
    precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0, prev_r = 0;
  for (size_t i = 0; i < flags.size(); ++i) {
    ap += (recall[i] - prev_r) * precision[i];
    prev_r = recall[i];
  }
  return ap;
}

double EvalReport::mean_ap(const std::vector<int>& class_ids) const {
  double sum = 0;
  int n = 0;
  for (int c : class_ids) {
    auto it = ap_by_class.find(c);
    if (it != ap_by_class.end()) {
      sum += it->second;
      ++n;
    }
  }
  return n ? sum / n : 0.0;
}

double EvalReport::mean_ap_all() const {
  double sum = 0;
  for (const auto& [c, ap] : ap_by_class) sum += ap;
  return ap_by_class.empty() ? 0.0 : sum / ap_by_class.size();
}

SupportFeatureBank build_support_bank(const FewShotModel& model,
                                      const DatasetIndex& index,
                                      const SupportPool& pool,
                                      ImageCache* cache) {
  ImageCache local(index);
  if (!cache) cache = &local;
  std::vector<SupportImage> supports;
  for (const auto& [cls, anns] : pool)
    for (long aid : anns)
      supports.push_back(make_support_crop(index, index.annotation(aid),
                                           model.detector.cfg.support_size,
                                           cache));
  if (supports.empty()) throw EvalError("support pool is empty");
  return support_encode(model.detector, supports);
}

EvalReport evaluate_model(const FewShotModel& model, const DatasetIndex& index,
                          const std::vector<long>& image_ids,
                          const SupportFeatureBank* bank,
                          const InferenceSettings& settings, double iou_thresh,
                          ApMode mode, const std::set<long>* masked) {
  std::map<int, std::vector<ScoredDet>> dets;
  std::map<int, std::vector<GtInstance>> gts;

  ImageCache cache(index);
  for (long id : image_ids) {
    for (long aid : index.annotations_of(id)) {
      const Annotation& a = index.annotation(aid);
      bool ignore = a.masked || (masked && masked->count(aid));
      gts[a.class_id].push_back({id, a.bbox, ignore});
    }
    for (const auto& d : detect_image(model, cache.get(id), bank, settings))
      dets[d.class_id].push_back({id, d.score, d.box});
  }

  EvalReport report;
  report.images = static_cast<int>(image_ids.size());
  report.iou_thresh = iou_thresh;
  for (const auto& [cls, instances] : gts) {
    int active = 0;
    for (const auto& g : instances)
      if (!g.ignore) ++active;
    report.gt_counts[cls] = active;
    auto it = dets.find(cls);
    report.det_counts[cls] =
        it == dets.end() ? 0 : static_cast<int>(it->second.size());
    if (active == 0) continue;  // AP stays absent, never zero
    std::vector<ScoredDet> class_dets =
        it == dets.end() ? std::vector<ScoredDet>{} : it->second;
    PrCurve curve;
    report.ap_by_class[cls] =
        compute_ap(std::move(class_dets), instances, iou_thresh, mode, &curve);
    report.pr_by_class[cls] = std::move(curve);
  }
  return report;
}

// ---- experiment grids ----

namespace {

GridCell run_cell(const DatasetIndex& index, const SplitSpec& split,
                  const GridSpec& spec, const std::string& method, int k,
                  int rho, std::map<std::string, FewShotModel>* base_cache) {
  GridCell cell;
  cell.method = method;
  cell.k = k;
  cell.rho = rho;

  std::string label =
      method + "/k" + std::to_string(k) + "/r" + std::to_string(rho);
  TrainConfig tune = spec.tune_cfg;
  tune.budget = ShotBudget{k, rho};
  tune.seed = derive_seed(spec.tune_cfg.seed, label);
  cell.seed = tune.seed;

  FusionMode fusion = FusionMode::kNone;
  if (method == "gru") fusion = FusionMode::kGru;
  else if (method == "xcorr") fusion = FusionMode::kXcorr;
  else if (method != "frcn-ft" && method != "frcn-joint")
    throw EvalError("unknown method: " + method);
  tune.fusion = fusion;

  FewShotModel model;
  SupportPool eval_pool;
  if (method == "frcn-joint") {
    TrainConfig base = spec.base_cfg;
    base.fusion = FusionMode::kNone;
    model = train_baseline(index, split, BaselineMode::kJoint, base, tune);
  } else {
    std::string base_key = fusion_mode_name(fusion);
    if (!base_cache->count(base_key)) {
      TrainConfig base = spec.base_cfg;
      base.fusion = fusion;
      base_cache->emplace(base_key, train_base(index, split, base));
    }
    model = base_cache->at(base_key);  // fresh copy per cell
    FinetuneSet set = sample_finetune_set(index, split, tune.budget, tune.seed);
    finetune_novel(model, index, split, set, tune);
    eval_pool = finetune_support_pool(index, set);
  }

  std::vector<long> test(split.test_images.begin(), split.test_images.end());
  SupportFeatureBank bank;
  bool with_bank = model.fusion != FusionMode::kNone;
  if (with_bank) bank = build_support_bank(model, index, eval_pool);
  EvalReport all = evaluate_model(model, index, test,
                                  with_bank ? &bank : nullptr, spec.inference,
                                  spec.iou_thresh, ApMode::kAllPoint);
  EvalReport eleven = evaluate_model(model, index, test,
                                     with_bank ? &bank : nullptr,
                                     spec.inference, spec.iou_thresh,
                                     ApMode::kElevenPoint);
  for (int c : split.classes.novel) {
    auto it = all.ap_by_class.find(c);
    if (it != all.ap_by_class.end()) cell.ap_by_class[c] = it->second;
    auto it11 = eleven.ap_by_class.find(c);
    if (it11 != eleven.ap_by_class.end()) cell.ap11_by_class[c] = it11->second;
  }
  cell.novel_map = all.mean_ap(split.classes.novel);
  cell.novel_map_11 = eleven.mean_ap(split.classes.novel);
  return cell;
}

std::string join_class_names(const DatasetIndex& index,
                             const std::vector<int>& ids) {
  std::string out;
  for (int c : ids) {
    if (!out.empty()) out += ',';
    out += index.classes()[c];
  }
  return out;
}

}  // namespace

std::vector<GridCell> run_experiment_grid(const DatasetIndex& index,
                                          const SplitSpec& split,
                                          const GridSpec& spec) {
  std::vector<SplitSpec> splits;
  if (spec.novel_choices.empty()) {
    splits.push_back(split);
  } else {
    for (const auto& novel : spec.novel_choices)
      splits.push_back(
          make_split(index, novel, spec.train_fraction, spec.split_seed));
  }

  std::vector<GridCell> cells;
  for (const auto& sp : splits) {
    std::map<std::string, FewShotModel> base_cache;  // per split
    std::string novel_names = join_class_names(index, sp.classes.novel);
    for (const auto& method : spec.methods)
      for (int k : spec.ks)
        for (int rho : spec.rhos) {
          GridCell cell;
          try {
            cell = run_cell(index, sp, spec, method, k, rho, &base_cache);
          } catch (const std::exception& e) {
            cell.method = method;
            cell.k = k;
            cell.rho = rho;
            cell.error = e.what();
          }
          cell.novel_names = novel_names;
          cells.push_back(cell);
        }
  }
  return cells;
}

namespace {
std::string rho_str(int rho) {
  return rho == ShotBudget::kInfinite ? "inf" : std::to_string(rho);
}
}  // namespace

void write_results_csv(const std::string& path,
                       const std::vector<GridCell>& cells,
                       const DatasetIndex& index) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw EvalError("cannot write " + path);
  out << "method,novel_class,k,rho,class,ap,seed\n";
  out.precision(10);
  for (const auto& cell : cells) {
    std::string head = cell.method + ',' + cell.novel_names + ',' +
                       std::to_string(cell.k) + ',' + rho_str(cell.rho);
    if (!cell.ok()) {
      out << head << ",ERROR,," << cell.seed << '\n';
      continue;
    }
    for (const auto& [cls, ap] : cell.ap_by_class)
      out << head << ',' << index.classes()[cls] << ',' << ap << ','
          << cell.seed << '\n';
    out << head << ",mean," << cell.novel_map << ',' << cell.seed << '\n';
  }
}

void write_results_jsonl(const std::string& path,
                         const std::vector<GridCell>& cells,
                         const DatasetIndex& index) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw EvalError("cannot write " + path);
  for (const auto& cell : cells) {
    json j;
    j["method"] = cell.method;
    j["novel_class"] = cell.novel_names;
    j["k"] = cell.k;
    j["rho"] = rho_str(cell.rho);
    j["seed"] = cell.seed;
    if (!cell.ok()) {
      j["error"] = cell.error;
    } else {
      json ap = json::object(), ap11 = json::object();
      for (const auto& [cls, v] : cell.ap_by_class)
        ap[index.classes()[cls]] = v;
      for (const auto& [cls, v] : cell.ap11_by_class)
        ap11[index.classes()[cls]] = v;
      j["ap_all_point"] = ap;
      j["ap_11_point"] = ap11;
      j["novel_map"] = cell.novel_map;
      j["novel_map_11"] = cell.novel_map_11;
    }
    out << j.dump() << '\n';
  }
}

std::vector<GridCell> read_results_jsonl(const std::string& path,
                                         const DatasetIndex& index) {
  std::ifstream in(path);
  if (!in) throw EvalError("cannot read " + path);
  std::vector<GridCell> cells;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    GridCell cell;
    cell.method = j.at("method").get<std::string>();
    cell.novel_names = j.value("novel_class", "");
    cell.k = j.at("k").get<int>();
    std::string rho = j.at("rho").get<std::string>();
    cell.rho = rho == "inf" ? ShotBudget::kInfinite : std::stoi(rho);
    cell.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("error")) {
      cell.error = j.at("error").get<std::string>();
    } else {
      for (const auto& [name, v] : j.at("ap_all_point").items()) {
        int cls = index.class_id_of(name);
        if (cls < 0) throw EvalError("unknown class in results: " + name);
        cell.ap_by_class[cls] = v.get<double>();
      }
      if (j.contains("ap_11_point"))
        for (const auto& [name, v] : j.at("ap_11_point").items())
          cell.ap11_by_class[index.class_id_of(name)] = v.get<double>();
      cell.novel_map = j.value("novel_map", 0.0);
      cell.novel_map_11 = j.value("novel_map_11", 0.0);
    }
    cells.push_back(cell);
  }
  return cells;
}

}  // namespace fsdet
