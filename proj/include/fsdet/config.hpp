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

#include <cstdint>
#include <string>
#include <vector>

#include "fsdet/dataset.hpp"

namespace fsdet {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Complete run configuration. JSON on disk, command-line flags override
// individual file keys. Validated up front; the hash of the validated
// state is embedded in every output artifact.
struct RunConfig {
  // data
  std::string dataset_root;
  std::string format = "canonical";  // canonical | voc | nwpu
  std::vector<std::string> novel_classes;
  double train_fraction = 0.8;
  int k = 1;
  int rho = 1;  // -1 = infinite
  // model
  std::string detector = "tiny";  // tiny | full
  std::string fusion = "gru";     // gru | xcorr | none
  // optimizer
  double lr = 1e-3;
  double finetune_lr_scale = 0.1;
  double momentum = 0.9;
  double grad_clip = 10.0;
  int steps_base = 500;
  int steps_finetune = 200;
  int rois_per_image = 32;
  int rpn_batch = 64;
  // bookkeeping
  std::uint64_t seed = 0;
  std::string out_dir;  // empty = $FSDET_OUT_ROOT or ./out
  // evaluation
  std::string ap_mode = "all-point";  // all-point | 11-point
  double iou_thresh = 0.5;
  double score_thresh = 0.05;
};

RunConfig load_run_config(const std::string& path);
void validate_run_config(const RunConfig& cfg);  // throws ConfigError
std::string run_config_json(const RunConfig& cfg);  // canonical serialization
std::string config_hash(const RunConfig& cfg);      // 16 hex digits

// out_dir, falling back to the FSDET_OUT_ROOT environment variable and
// then to "out".
std::string resolve_out_dir(const RunConfig& cfg);

}  // namespace fsdet
