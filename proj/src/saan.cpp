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

#include "fsdet/saan.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

namespace fsdet {

FusionMode parse_fusion_mode(const std::string& s) {
  if (s == "gru") return FusionMode::kGru;
  if (s == "xcorr") return FusionMode::kXcorr;
  if (s == "none") return FusionMode::kNone;
  throw std::invalid_argument("unknown fusion mode: " + s);
}

std::string fusion_mode_name(FusionMode m) {
  switch (m) {
    case FusionMode::kGru: return "gru";
    case FusionMode::kXcorr: return "xcorr";
    case FusionMode::kNone: return "none";
  }
  return "?";
}

void GruWeights::init(std::mt19937_64& rng) {
  int d = dim();
  init_uniform(wr, 1.0 / std::sqrt(2.0 * d), rng);
  init_uniform(wz, 1.0 / std::sqrt(2.0 * d), rng);
  init_uniform(w, 1.0 / std::sqrt(static_cast<double>(d)), rng);
  init_uniform(u, 1.0 / std::sqrt(static_cast<double>(d)), rng);
}

Vec relation_gru_cell(const Vec& x, const Vec& h_prev, const GruWeights& gw,
                      GruCellCtx* ctx) {
  int d = gw.dim();
  if (x.size() != d || h_prev.size() != d)
    throw std::invalid_argument("relation_gru_cell: dimension mismatch");
  Vec cat(2 * d);
  cat << x, h_prev;
  Vec r = (gw.wr.value * cat).unaryExpr([](double v) { return sigmoid(v); });
  Vec z = (gw.wz.value * cat).unaryExpr([](double v) { return sigmoid(v); });
  Vec m = r.cwiseProduct(h_prev);
  Vec hp = (gw.w.value * x + gw.u.value * m).array().tanh();
  Vec h = z.cwiseProduct(h_prev) + (Vec::Ones(d) - z).cwiseProduct(hp);
  if (ctx) {
    ctx->x = x;
    ctx->h = h_prev;
    ctx->r = r;
    ctx->z = z;
    ctx->hp = hp;
    ctx->m = m;
  }
  return h;
}

std::pair<Vec, Vec> relation_gru_cell_backward(GruWeights& gw,
                                               const GruCellCtx& ctx,
                                               const Vec& gh_out) {
  int d = gw.dim();
  Vec cat(2 * d);
  cat << ctx.x, ctx.h;

  Vec gz = gh_out.cwiseProduct(ctx.h - ctx.hp);
  Vec ghp = gh_out.cwiseProduct(Vec::Ones(d) - ctx.z);
  Vec gh = gh_out.cwiseProduct(ctx.z);

  Vec gah = ghp.cwiseProduct(Vec::Ones(d) - ctx.hp.cwiseProduct(ctx.hp));
  gw.w.grad.noalias() += gah * ctx.x.transpose();
  Vec gx = gw.w.value.transpose() * gah;
  gw.u.grad.noalias() += gah * ctx.m.transpose();
  Vec gm = gw.u.value.transpose() * gah;

  Vec gr = gm.cwiseProduct(ctx.h);
  gh += gm.cwiseProduct(ctx.r);

  Vec gar = gr.cwiseProduct(ctx.r).cwiseProduct(Vec::Ones(d) - ctx.r);
  gw.wr.grad.noalias() += gar * cat.transpose();
  Vec gcat = gw.wr.value.transpose() * gar;

  Vec gaz = gz.cwiseProduct(ctx.z).cwiseProduct(Vec::Ones(d) - ctx.z);
  gw.wz.grad.noalias() += gaz * cat.transpose();
  gcat += gw.wz.value.transpose() * gaz;

  gx += gcat.head(d);
  gh += gcat.tail(d);
  return {gx, gh};
}

Vec fuse_roi_with_supports(const Vec& roi, const SupportFeatureBank& bank,
                           const GruWeights& gw, FuseCtx* ctx) {
  if (bank.size() == 0)
    throw std::invalid_argument("fuse_roi_with_supports: empty bank");
  if (ctx) ctx->cells.resize(bank.size());
  Vec h = roi;
  for (int t = 0; t < bank.size(); ++t)
    h = relation_gru_cell(bank.vectors.col(t), h, gw,
                          ctx ? &ctx->cells[t] : nullptr);
  return h;
}

std::pair<Vec, Mat> fuse_backward(GruWeights& gw, const FuseCtx& ctx,
                                  const Vec& gfused) {
  int c = static_cast<int>(ctx.cells.size());
  Mat gbank(gw.dim(), c);
  Vec gh = gfused;
  for (int t = c - 1; t >= 0; --t) {
    auto [gx, gh_prev] = relation_gru_cell_backward(gw, ctx.cells[t], gh);
    gbank.col(t) = gx;
    gh = gh_prev;
  }
  return {gh, gbank};
}

Vec depthwise_cross_correlation(const Vec& roi, const Vec& support) {
  if (roi.size() != support.size())
    throw std::invalid_argument("cross correlation: dimension mismatch");
  return roi.cwiseProduct(support);
}

SupportFeatureBank support_encode(const Detector& det,
                                  const std::vector<SupportImage>& supports,
                                  SupportEncodeCtx* ctx) {
  if (supports.empty())
    throw std::invalid_argument("support_encode: no support images");
  // group crops by class, ascending id
  std::map<int, std::vector<const SupportImage*>> by_class;
  for (const auto& s : supports) {
    if (s.class_id < 0)
      throw std::invalid_argument("support_encode: support without class");
    by_class[s.class_id].push_back(&s);
  }

  int p = det.cfg.roi_pool_size;
  std::vector<Tensor3> pooled;
  std::vector<int> column_class;
  if (ctx) {
    ctx->backbone.clear();
    ctx->avgpool.clear();
    ctx->class_counts.clear();
  }
  int col = 0;
  for (const auto& [cls, imgs] : by_class) {
    for (const SupportImage* s : imgs) {
      if (ctx) {
        ctx->backbone.emplace_back();
        ctx->avgpool.emplace_back();
      }
      Image norm = normalize_image(s->pixels, det.cfg);
      BackboneFeatures feat = backbone_forward(
          det.backbone, norm, det.cfg, ctx ? &ctx->backbone.back() : nullptr);
      pooled.push_back(adaptive_avgpool_forward(
          feat.map, p, ctx ? &ctx->avgpool.back() : nullptr));
      column_class.push_back(col);
    }
    if (ctx) ctx->class_counts.push_back(static_cast<int>(imgs.size()));
    ++col;
  }

  Mat feats = roi_head_forward(det.roi_head, stack_pooled(pooled),
                               ctx ? &ctx->roi_head : nullptr);

  SupportFeatureBank bank;
  bank.vectors = Mat::Zero(det.cfg.feature_dim, by_class.size());
  int e = 0;
  col = 0;
  for (const auto& [cls, imgs] : by_class) {
    std::ostringstream prov;
    prov << "class " << cls << " <- mean of annotations [";
    for (size_t i = 0; i < imgs.size(); ++i) {
      bank.vectors.col(col) += feats.col(e++);
      prov << (i ? "," : "") << imgs[i]->annotation_id;
    }
    prov << "]";
    bank.vectors.col(col) /= static_cast<double>(imgs.size());
    bank.class_ids.push_back(cls);
    bank.provenance.push_back(prov.str());
    ++col;
  }
  if (ctx) ctx->column_class = column_class;
  return bank;
}

void support_encode_backward(Detector& det, const SupportEncodeCtx& ctx,
                             const Mat& gbank) {
  // mean reduction spreads each bank gradient over the class's columns
  Mat gfeats(gbank.rows(), ctx.column_class.size());
  for (size_t e = 0; e < ctx.column_class.size(); ++e) {
    int col = ctx.column_class[e];
    gfeats.col(static_cast<Eigen::Index>(e)) =
        gbank.col(col) / static_cast<double>(ctx.class_counts[col]);
  }
  Mat gpooled = roi_head_backward(det.roi_head, ctx.roi_head, gfeats);
  int p = det.cfg.roi_pool_size;
  int c = det.cfg.feat_channels();
  for (size_t e = 0; e < ctx.column_class.size(); ++e) {
    Tensor3 g = unflatten(gpooled.col(static_cast<Eigen::Index>(e)), c, p, p);
    Tensor3 gfeat = adaptive_avgpool_backward(ctx.avgpool[e], g);
    backbone_backward(det.backbone, ctx.backbone[e], gfeat);
  }
}

std::vector<Param*> FewShotModel::parameters() {
  std::vector<Param*> out = detector.parameters();
  if (fusion == FusionMode::kGru)
    for (Param* p : gru.parameters()) out.push_back(p);
  return out;
}

int FewShotModel::local_index(int global_class_id) const {
  auto it = std::find(class_ids.begin(), class_ids.end(), global_class_id);
  return it == class_ids.end() ? -1
                               : static_cast<int>(it - class_ids.begin());
}

Mat fuse_batch(const FewShotModel& model, const Mat& roi_feats,
               const SupportFeatureBank* bank, std::vector<FuseCtx>* ctxs) {
  if (model.fusion == FusionMode::kNone) return roi_feats;
  if (!bank || bank->size() == 0)
    throw std::invalid_argument("fusion requires a support bank");
  Mat out(roi_feats.rows(), roi_feats.cols());
  if (ctxs) ctxs->resize(roi_feats.cols());
  for (int i = 0; i < roi_feats.cols(); ++i) {
    if (model.fusion == FusionMode::kGru) {
      out.col(i) = fuse_roi_with_supports(roi_feats.col(i), *bank, model.gru,
                                          ctxs ? &(*ctxs)[i] : nullptr);
    } else {
      // xcorr baseline: pointwise product with the bank mean
      Vec mean = bank->vectors.rowwise().mean();
      out.col(i) = depthwise_cross_correlation(roi_feats.col(i), mean);
    }
  }
  return out;
}

std::vector<DetectionResult> detect_image(const FewShotModel& model,
                                          const Image& image,
                                          const SupportFeatureBank* bank,
                                          const InferenceSettings& settings) {
  const Detector& det = model.detector;
  Image norm = normalize_image(image, det.cfg);
  BackboneFeatures feat = backbone_forward(det.backbone, norm, det.cfg);
  RpnOut rpn_out = rpn_forward(det.rpn, feat.map, nullptr);
  std::vector<BBox> anchors = generate_anchors(det.cfg, feat.map.h, feat.map.w);
  std::vector<Proposal> props =
      rpn_propose(rpn_out, anchors, image.w, image.h, det.cfg);
  if (props.empty()) return {};

  std::vector<Tensor3> pooled;
  pooled.reserve(props.size());
  for (const auto& p : props)
    pooled.push_back(roi_align(feat, p.box, det.cfg.roi_pool_size));
  Mat roi_feats =
      roi_head_forward(det.roi_head, stack_pooled(pooled), nullptr);
  Mat fused = fuse_batch(model, roi_feats, bank);
  PredictOut pred = predict_head_forward(det.predict, fused, nullptr);

  int k = det.predict.num_classes();
  std::vector<DetectionResult> all;
  for (int local = 0; local < k; ++local) {
    std::vector<BBox> boxes;
    std::vector<double> scores;
    for (int i = 0; i < pred.cls_logits.cols(); ++i) {
      Vec probs = softmax(pred.cls_logits.col(i));
      double s = probs(local + 1);
      if (s < settings.score_thresh) continue;
      std::array<double, 4> deltas = {pred.reg_deltas(4 * local + 0, i),
                                      pred.reg_deltas(4 * local + 1, i),
                                      pred.reg_deltas(4 * local + 2, i),
                                      pred.reg_deltas(4 * local + 3, i)};
      BBox b = clip_box(decode_box(props[i].box, deltas), image.w, image.h);
      if (b.width() < 1 || b.height() < 1) continue;
      boxes.push_back(b);
      scores.push_back(s);
    }
    for (int kept : nms(boxes, scores, settings.nms_thresh)) {
      DetectionResult r;
      r.class_id = model.class_ids.empty() ? local : model.class_ids[local];
      r.score = scores[kept];
      r.box = boxes[kept];
      all.push_back(r);
    }
  }
  std::sort(all.begin(), all.end(),
            [](const DetectionResult& a, const DetectionResult& b) {
              return a.score > b.score;
            });
  if (static_cast<int>(all.size()) > settings.max_detections)
    all.resize(settings.max_detections);
  return all;
}

}  // namespace fsdet
