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

#include "fsdet/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>

#include <json.hpp>

using nlohmann::json;

namespace fsdet {

namespace {

json to_json(const RunConfig& c) {
  // key order is fixed so the hash is stable
  json j;
  j["dataset_root"] = c.dataset_root;
  j["format"] = c.format;
  j["novel_classes"] = c.novel_classes;
  j["train_fraction"] = c.train_fraction;
  j["k"] = c.k;
  j["rho"] = c.rho;
  j["detector"] = c.detector;
  j["fusion"] = c.fusion;
  j["lr"] = c.lr;
  j["finetune_lr_scale"] = c.finetune_lr_scale;
  j["momentum"] = c.momentum;
  j["grad_clip"] = c.grad_clip;
  j["steps_base"] = c.steps_base;
  j["steps_finetune"] = c.steps_finetune;
  j["rois_per_image"] = c.rois_per_image;
  j["rpn_batch"] = c.rpn_batch;
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir;
  j["ap_mode"] = c.ap_mode;
  j["iou_thresh"] = c.iou_thresh;
  j["score_thresh"] = c.score_thresh;
  return j;
}

}  // namespace

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config parse error in " + path + ": " + e.what());
  }
  RunConfig c;
  json defaults = to_json(c);
  for (const auto& [key, value] : j.items())
    if (!defaults.contains(key))
      throw ConfigError("unknown config key: " + key);
  c.dataset_root = j.value("dataset_root", c.dataset_root);
  c.format = j.value("format", c.format);
  c.novel_classes = j.value("novel_classes", c.novel_classes);
  c.train_fraction = j.value("train_fraction", c.train_fraction);
  c.k = j.value("k", c.k);
  c.rho = j.value("rho", c.rho);
  c.detector = j.value("detector", c.detector);
  c.fusion = j.value("fusion", c.fusion);
  c.lr = j.value("lr", c.lr);
  c.finetune_lr_scale = j.value("finetune_lr_scale", c.finetune_lr_scale);
  c.momentum = j.value("momentum", c.momentum);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.steps_base = j.value("steps_base", c.steps_base);
  c.steps_finetune = j.value("steps_finetune", c.steps_finetune);
  c.rois_per_image = j.value("rois_per_image", c.rois_per_image);
  c.rpn_batch = j.value("rpn_batch", c.rpn_batch);
  c.seed = j.value("seed", c.seed);
  c.out_dir = j.value("out_dir", c.out_dir);
  c.ap_mode = j.value("ap_mode", c.ap_mode);
  c.iou_thresh = j.value("iou_thresh", c.iou_thresh);
  c.score_thresh = j.value("score_thresh", c.score_thresh);
  return c;
}

void validate_run_config(const RunConfig& c) {
  if (c.format != "canonical" && c.format != "voc" && c.format != "nwpu")
    throw ConfigError("format must be canonical, voc or nwpu");
  if (c.detector != "tiny" && c.detector != "full")
    throw ConfigError("detector must be tiny or full");
  if (c.fusion != "gru" && c.fusion != "xcorr" && c.fusion != "none")
    throw ConfigError("fusion must be gru, xcorr or none");
  if (c.ap_mode != "all-point" && c.ap_mode != "11-point")
    throw ConfigError("ap_mode must be all-point or 11-point");
  if (!(c.train_fraction > 0.0 && c.train_fraction < 1.0))
    throw ConfigError("train_fraction must lie in (0, 1)");
  if (c.k < 1) throw ConfigError("k must be >= 1");
  if (c.rho < 0 && c.rho != ShotBudget::kInfinite)
    throw ConfigError("rho must be >= 0 or -1 for infinite");
  if (c.lr <= 0 || c.momentum < 0 || c.momentum >= 1)
    throw ConfigError("invalid optimizer settings");
  if (c.steps_base < 1 || c.steps_finetune < 1)
    throw ConfigError("step budgets must be >= 1");
  if (c.rois_per_image < 1 || c.rpn_batch < 1)
    throw ConfigError("batch sizes must be >= 1");
  if (!(c.iou_thresh > 0 && c.iou_thresh <= 1))
    throw ConfigError("iou_thresh must lie in (0, 1]");
}

std::string run_config_json(const RunConfig& c) { return to_json(c).dump(2); }

std::string config_hash(const RunConfig& c) {
  std::string s = to_json(c).dump();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (char ch : s) {
    h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(ch));
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

std::string resolve_out_dir(const RunConfig& c) {
  if (!c.out_dir.empty()) return c.out_dir;
  if (const char* env = std::getenv("FSDET_OUT_ROOT"); env && *env)
    return env;
  return "out";
}

}  // namespace fsdet
