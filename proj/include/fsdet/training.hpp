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

#include <functional>

#include "fsdet/dataset.hpp"
#include "fsdet/saan.hpp"

namespace fsdet {

struct TrainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  Phase phase = Phase::kBase;
  FusionMode fusion = FusionMode::kGru;
  std::string detector_kind = "tiny";
  int steps = 500;
  double lr = 1e-3;
  double momentum = 0.9;
  double grad_clip = 10.0;
  int rois_per_image = 32;
  int rpn_batch = 64;
  bool hflip = false;
  ShotBudget budget;       // finetune / joint phases
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string out_dir;     // diagnostics on failure; empty = disabled
};

struct LossRecord {
  long step = 0;
  double rpn_cls = 0, rpn_reg = 0, roi_cls = 0, roi_reg = 0;
  double total() const { return rpn_cls + rpn_reg + roi_cls + roi_reg; }
};

struct TrainResult {
  std::vector<LossRecord> losses;
  std::vector<long> episode_queries;  // query image id per step
};

// Loss-log file: one tab-separated LossRecord per line.
void write_loss_log(const std::string& path,
                    const std::vector<LossRecord>& records,
                    const std::string& config_hash, std::uint64_t seed);
std::vector<LossRecord> read_loss_log(const std::string& path);

struct CheckpointMeta {
  std::vector<int> class_ids;            // global id per predict-head slot
  std::vector<std::string> class_names;  // same order
  int feature_dim = 0;
  std::string phase;
  std::string detector_kind = "tiny";
  std::string fusion = "gru";
  std::string config_hash;
  std::uint64_t seed = 0;
  long steps = 0;
  int k = 0;
  std::string rho;
};

// Weight archive plus a JSON metadata sidecar at <path>.meta.json.
// Writes are atomic (temp file then rename).
void save_checkpoint(const std::string& path, FewShotModel& model,
                     const CheckpointMeta& meta);
FewShotModel load_checkpoint(const std::string& path, CheckpointMeta* meta);

// ---- target assignment and losses ----

struct RoiSample {
  BBox box;
  int label = 0;                      // 0 = background, else local class + 1
  std::array<double, 4> reg_target{};  // fg only
};

// Smooth-L1 / cross-entropy detection losses over pre-assigned targets;
// see train_* for the assignment rules. Exposed mainly for tests.
double classification_loss(const Mat& logits, const std::vector<int>& labels,
                           Mat* glogits);
double regression_loss(const Mat& deltas, const std::vector<RoiSample>& rois,
                       Mat* gdeltas);

// The parameters the support encoder touches; every one is an alias of
// a detector parameter (the GRU is not part of the encoder).
std::vector<Param*> support_encoder_parameters(FewShotModel& model);

// ---- the two-phase scheme ----

// Phase 1: base classes only; images carrying novel objects are
// excluded from the query pool and the support pool.
FewShotModel train_base(const DatasetIndex& index, const SplitSpec& split,
                        const TrainConfig& cfg, TrainResult* result = nullptr);

// Phase 2: expands the predict head with the novel classes and repeats
// the phase-1 procedure on the fine-tune set.
void finetune_novel(FewShotModel& model, const DatasetIndex& index,
                    const SplitSpec& split, const FinetuneSet& set,
                    const TrainConfig& cfg, TrainResult* result = nullptr);

enum class BaselineMode { kJoint, kFt };

// FRCN-joint trains one phase on all base data plus k-shot novel data;
// FRCN-ft runs the two-phase scheme. Both force fusion = none.
FewShotModel train_baseline(const DatasetIndex& index, const SplitSpec& split,
                            BaselineMode mode, const TrainConfig& base_cfg,
                            const TrainConfig& tune_cfg,
                            TrainResult* result = nullptr);

// Repeatedly trains on one fixed episode; used by the overfit smoke
// checks. Query image and supports stay constant across steps.
TrainResult overfit_one_episode(FewShotModel& model, const DatasetIndex& index,
                                long query_image_id, const Episode& episode,
                                const TrainConfig& cfg);

}  // namespace fsdet
