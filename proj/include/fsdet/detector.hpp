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

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fsdet/geometry.hpp"
#include "fsdet/nn.hpp"

namespace fsdet {

enum class DetectorKind { kTiny, kFull };

struct DetectorConfig {
  DetectorKind kind = DetectorKind::kTiny;
  std::vector<int> conv_channels = {16, 32, 64};  // one pool after each
  int roi_pool_size = 7;                          // P
  int roi_hidden = 256;
  int feature_dim = 256;                          // d
  std::vector<double> anchor_scales = {16, 24, 36};
  std::vector<double> anchor_ratios = {0.5, 1.0, 2.0};
  double rpn_nms_thresh = 0.7;
  int rpn_pre_nms_top = 600;
  int rpn_post_nms_top = 100;  // N_pre cap on emitted proposals
  int support_size = 64;       // S for support crops
  double pixel_mean = 0.5;

  int stride() const { return 1 << static_cast<int>(conv_channels.size()); }
  int feat_channels() const { return conv_channels.back(); }
  int num_anchors() const {
    return static_cast<int>(anchor_scales.size() * anchor_ratios.size());
  }
};

DetectorConfig tiny_detector_config();
DetectorConfig full_detector_config();
DetectorConfig detector_config_for(const std::string& kind);

// ---- box utilities ----

double iou(const BBox& a, const BBox& b);
BBox clip_box(const BBox& b, int width, int height);
// (tx, ty, tw, th) encoding of gt relative to an anchor/proposal
std::array<double, 4> encode_box(const BBox& anchor, const BBox& gt);
BBox decode_box(const BBox& anchor, const std::array<double, 4>& deltas);
// score-descending greedy suppression; equal scores keep the lower index
std::vector<int> nms(const std::vector<BBox>& boxes,
                     const std::vector<double>& scores, double thresh);

struct Proposal {
  BBox box;
  double score = 0;  // objectness in [0, 1]
};

struct DetectionResult {
  int class_id = -1;  // global class id
  double score = 0;
  BBox box;
};

// ---- backbone ----

struct Backbone {
  std::vector<ConvParam> convs;

  void build(const DetectorConfig& cfg, int in_channels = 3);
  void init(std::mt19937_64& rng);
  std::vector<Param*> parameters();
};

struct BackboneCtx {
  std::vector<ConvCtx> conv;
  std::vector<ReluCtx> relu;
  std::vector<PoolCtx> pool;
};

struct BackboneFeatures {
  Tensor3 map;
  int stride = 0;
};

Image normalize_image(const Image& img, const DetectorConfig& cfg);

// expects a normalized image; throws when smaller than one stride
BackboneFeatures backbone_forward(const Backbone& bb, const Image& image,
                                  const DetectorConfig& cfg,
                                  BackboneCtx* ctx = nullptr);
Image backbone_backward(Backbone& bb, const BackboneCtx& ctx,
                        const Tensor3& gfeat);

// ---- region proposal stage ----

struct RpnHead {
  ConvParam conv;
  ConvParam cls;  // A logits per cell
  ConvParam reg;  // 4A deltas per cell

  void build(const DetectorConfig& cfg);
  void init(std::mt19937_64& rng);
  std::vector<Param*> parameters();
};

struct RpnCtx {
  ConvCtx conv, cls, reg;
  ReluCtx relu;
};

struct RpnOut {
  Tensor3 cls_logits;  // A x h x w
  Tensor3 reg_deltas;  // 4A x h x w
};

RpnOut rpn_forward(const RpnHead& head, const Tensor3& feat, RpnCtx* ctx);
Tensor3 rpn_backward(RpnHead& head, const RpnCtx& ctx, const Tensor3& gcls,
                     const Tensor3& greg);

// anchors for an h x w feature grid, row-major cells, anchor index fastest
std::vector<BBox> generate_anchors(const DetectorConfig& cfg, int fh, int fw);

std::vector<Proposal> rpn_propose(const RpnOut& out,
                                  const std::vector<BBox>& anchors,
                                  int image_w, int image_h,
                                  const DetectorConfig& cfg);

// ---- RoIAlign ----

struct RoiAlignCtx {
  int c = 0, fh = 0, fw = 0, pool = 0;
  std::vector<std::array<int, 4>> idx;
  std::vector<std::array<double, 4>> wgt;
};

// box is in image coordinates; features carry the stride
Tensor3 roi_align(const BackboneFeatures& feat, const BBox& box, int pool_size,
                  RoiAlignCtx* ctx = nullptr);
Tensor3 roi_align_backward(const RoiAlignCtx& ctx, const Tensor3& gy);

// ---- RoI head (shared with the support encoder) ----

struct RoiHead {
  LinearParam fc1, fc2;

  void build(const DetectorConfig& cfg);
  void init(std::mt19937_64& rng);
  std::vector<Param*> parameters();
};

struct RoiHeadCtx {
  LinearCtx fc1, fc2;
  ReluMatCtx r1, r2;
};

// columns are RoIs: (c*P*P) x n in, d x n out
Mat roi_head_forward(const RoiHead& head, const Mat& pooled, RoiHeadCtx* ctx);
Mat roi_head_backward(RoiHead& head, const RoiHeadCtx& ctx, const Mat& gy);

Mat stack_pooled(const std::vector<Tensor3>& pooled);

// ---- predict head ----

struct PredictHead {
  LinearParam cls;  // (K+1) x d, row 0 is background
  LinearParam reg;  // 4K x d

  int num_classes() const { return cls.out_dim() - 1; }
  void build(const DetectorConfig& cfg, int num_classes);
  void init(std::mt19937_64& rng);
  std::vector<Param*> parameters();
};

struct PredictCtx {
  LinearCtx cls, reg;
};

struct PredictOut {
  Mat cls_logits;  // (K+1) x n
  Mat reg_deltas;  // 4K x n
};

PredictOut predict_head_forward(const PredictHead& head, const Mat& feats,
                                PredictCtx* ctx);
Mat predict_head_backward(PredictHead& head, const PredictCtx& ctx,
                          const Mat& gcls, const Mat& greg);

// ---- whole detector ----

struct Detector {
  DetectorConfig cfg;
  Backbone backbone;
  RpnHead rpn;
  RoiHead roi_head;
  PredictHead predict;

  void build(const DetectorConfig& config, int num_classes,
             std::uint64_t seed);
  std::vector<Param*> parameters();
  int num_classes() const { return predict.num_classes(); }
};

// Grows the predict head from K to new_num_classes. Existing class rows
// (and the background row) are preserved bit-exactly; new weight rows
// are U(-0.01, 0.01), new biases zero.
void expand_predict_head(Detector& det, int new_num_classes,
                         std::mt19937_64& rng);

// ---- parameter archives ----

void save_param_archive(const std::string& path,
                        const std::vector<Param*>& params);
void load_param_archive(const std::string& path,
                        const std::vector<Param*>& params);

}  // namespace fsdet
