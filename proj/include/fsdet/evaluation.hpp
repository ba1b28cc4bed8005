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

#pragma once

#include "fsdet/training.hpp"

namespace fsdet {

struct EvalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class ApMode { kAllPoint, kElevenPoint };

ApMode parse_ap_mode(const std::string& s);

// Single-class inputs for the precision/recall machinery.
struct ScoredDet {
  long image_id = -1;
  double score = 0;
  BBox box;
};

struct GtInstance {
  long image_id = -1;
  BBox box;
  bool ignore = false;  // neither a hit target nor a false-positive source
};

// (recall, precision) points, one per counted detection
using PrCurve = std::vector<std::pair<double, double>>;

// Average precision for one class at one IoU threshold. Detections are
// matched greedily in descending score (ties keep input order) against
// the highest-overlap unmatched ground truth of the same image.
// Detections whose best remaining overlap lands on an ignore instance
// are dropped from the curve. Requires at least one non-ignored ground
// truth; callers must skip absent classes rather than scoring them 0.
double compute_ap(std::vector<ScoredDet> dets,
                  const std::vector<GtInstance>& gts, double iou_thresh = 0.5,
                  ApMode mode = ApMode::kAllPoint, PrCurve* curve = nullptr);

struct EvalReport {
  std::map<int, double> ap_by_class;  // only classes with >=1 active gt
  std::map<int, PrCurve> pr_by_class;
  std::map<int, int> gt_counts;       // active gt instances per class
  std::map<int, int> det_counts;
  int images = 0;
  double iou_thresh = 0.5;

  // mean over the requested classes that have an AP entry
  double mean_ap(const std::vector<int>& class_ids) const;
  double mean_ap_all() const;
};

// Encodes every pooled support annotation; crops of one class reduce to
// their elementwise mean inside support_encode.
SupportFeatureBank build_support_bank(const FewShotModel& model,
                                      const DatasetIndex& index,
                                      const SupportPool& pool,
                                      ImageCache* cache = nullptr);

// Runs inference over `image_ids` and scores it against the index
// annotations. Annotations flagged in `masked` become ignore instances.
EvalReport evaluate_model(const FewShotModel& model, const DatasetIndex& index,
                          const std::vector<long>& image_ids,
                          const SupportFeatureBank* bank,
                          const InferenceSettings& settings = {},
                          double iou_thresh = 0.5,
                          ApMode mode = ApMode::kAllPoint,
                          const std::set<long>* masked = nullptr);

// ---- experiment grids ----

struct GridCell {
  std::string method;  // gru | xcorr | frcn-ft | frcn-joint
  std::string novel_names;  // comma-joined novel class names of the split
  int k = 1;
  int rho = 1;
  std::uint64_t seed = 0;
  std::map<int, double> ap_by_class;    // novel classes, all-point
  std::map<int, double> ap11_by_class;  // same at 11-point interpolation
  double novel_map = 0;
  double novel_map_11 = 0;
  std::string error;  // non-empty when the cell failed

  bool ok() const { return error.empty(); }
};

struct GridSpec {
  std::vector<std::string> methods = {"gru"};
  std::vector<int> ks = {1, 2, 3, 5, 10};
  std::vector<int> rhos = {1};  // ShotBudget::kInfinite allowed
  // Novel-class choices; each entry yields its own base/novel split.
  // Empty = use the split passed to run_experiment_grid as-is.
  std::vector<std::vector<int>> novel_choices;
  double train_fraction = 0.8;
  std::uint64_t split_seed = 0;
  TrainConfig base_cfg;
  TrainConfig tune_cfg;
  InferenceSettings inference;
  double iou_thresh = 0.5;
};

// One train + eval per (novel choice, method, k, rho). A failing cell
// records its error string and the grid continues. Both interpolation
// variants of AP are reported per cell.
std::vector<GridCell> run_experiment_grid(const DatasetIndex& index,
                                          const SplitSpec& split,
                                          const GridSpec& spec);

void write_results_csv(const std::string& path,
                       const std::vector<GridCell>& cells,
                       const DatasetIndex& index);
void write_results_jsonl(const std::string& path,
                         const std::vector<GridCell>& cells,
                         const DatasetIndex& index);
// Inverse of write_results_jsonl; class names resolve against `index`.
std::vector<GridCell> read_results_jsonl(const std::string& path,
                                         const DatasetIndex& index);

}  // namespace fsdet
