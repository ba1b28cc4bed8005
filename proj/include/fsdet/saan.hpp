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

#include "fsdet/detector.hpp"

namespace fsdet {

enum class FusionMode { kGru, kXcorr, kNone };

FusionMode parse_fusion_mode(const std::string& s);
std::string fusion_mode_name(FusionMode m);

// The four matrices of the relation GRU. The equations carry no bias
// terms and none are added here.
struct GruWeights {
  Param wr;  // reset gate, d x 2d
  Param wz;  // update gate, d x 2d
  Param w;   // input transform, d x d
  Param u;   // recurrent transform, d x d

  GruWeights() = default;
  explicit GruWeights(int d)
      : wr("gru.wr", d, 2 * d), wz("gru.wz", d, 2 * d), w("gru.w", d, d),
        u("gru.u", d, d) {}
  void init(std::mt19937_64& rng);
  int dim() const { return static_cast<int>(w.value.rows()); }
  std::vector<Param*> parameters() { return {&wr, &wz, &w, &u}; }
};

struct GruCellCtx {
  Vec x, h, r, z, hp, m;
};

// One step of the relation GRU:
//   R  = sigmoid(Wr [x; h])
//   Z  = sigmoid(Wz [x; h])
//   H' = tanh(W x + U (R .* h))
//   H  = Z .* h + (1 - Z) .* H'
// Note the update gate weights the *previous* state, the complement the
// candidate; this gate assignment is intentional.
Vec relation_gru_cell(const Vec& x, const Vec& h_prev, const GruWeights& gw,
                      GruCellCtx* ctx = nullptr);
// accumulates weight grads; returns (gx, gh_prev)
std::pair<Vec, Vec> relation_gru_cell_backward(GruWeights& gw,
                                               const GruCellCtx& ctx,
                                               const Vec& gh);

// One encoded vector per active class, iterated in ascending class id.
struct SupportFeatureBank {
  std::vector<int> class_ids;          // ascending global ids
  Mat vectors;                         // d x C
  std::vector<std::string> provenance;  // per class, annotation ids + reduction

  int size() const { return static_cast<int>(class_ids.size()); }
};

struct FuseCtx {
  std::vector<GruCellCtx> cells;
};

// Support vectors are the GRU inputs, the RoI feature the initial hidden
// state; the final hidden state is the attention-added feature.
Vec fuse_roi_with_supports(const Vec& roi, const SupportFeatureBank& bank,
                           const GruWeights& gw, FuseCtx* ctx = nullptr);
// returns (g_roi, g_bank [d x C]); accumulates GRU weight grads
std::pair<Vec, Mat> fuse_backward(GruWeights& gw, const FuseCtx& ctx,
                                  const Vec& gfused);

// Elementwise-product baseline fusion.
Vec depthwise_cross_correlation(const Vec& roi, const Vec& support);

// ---- support encoding through the shared detector weights ----

struct SupportEncodeCtx {
  std::vector<BackboneCtx> backbone;
  std::vector<AvgPoolCtx> avgpool;
  RoiHeadCtx roi_head;
  std::vector<int> column_class;  // bank column per encoded support
  std::vector<int> class_counts;  // supports per bank column
};

// Encodes support crops with the shared backbone and RoI head: backbone
// features are average-pooled to the RoI grid so the RoI head applies
// unchanged. Several crops of one class reduce to their elementwise
// mean. No parameters exist on this path beyond the shared detector set.
SupportFeatureBank support_encode(const Detector& det,
                                  const std::vector<SupportImage>& supports,
                                  SupportEncodeCtx* ctx = nullptr);
void support_encode_backward(Detector& det, const SupportEncodeCtx& ctx,
                             const Mat& gbank);

// ---- whole model ----

struct FewShotModel {
  Detector detector;
  GruWeights gru;
  FusionMode fusion = FusionMode::kGru;
  std::vector<int> class_ids;  // global class id per predict-head slot

  std::vector<Param*> parameters();
  int local_index(int global_class_id) const;  // -1 when absent
};

// Fuses a batch of RoI feature columns with the bank (mode-dependent).
Mat fuse_batch(const FewShotModel& model, const Mat& roi_feats,
               const SupportFeatureBank* bank,
               std::vector<FuseCtx>* ctxs = nullptr);

struct InferenceSettings {
  double score_thresh = 0.05;
  double nms_thresh = 0.3;
  int max_detections = 100;
};

// Full two-stage inference on one image. `bank` may be null only when
// fusion mode is kNone.
std::vector<DetectionResult> detect_image(const FewShotModel& model,
                                          const Image& image,
                                          const SupportFeatureBank* bank,
                                          const InferenceSettings& settings = {});

}  // namespace fsdet
