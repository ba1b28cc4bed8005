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

#include "fsdet/detector.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "fsdet/rng.hpp"

namespace fsdet {

DetectorConfig tiny_detector_config() { return DetectorConfig{}; }

DetectorConfig full_detector_config() {
  DetectorConfig cfg;
  cfg.kind = DetectorKind::kFull;
  cfg.conv_channels = {32, 64, 128, 256};
  cfg.roi_hidden = 1024;
  cfg.feature_dim = 1024;
  cfg.anchor_scales = {64, 128, 256, 512};
  cfg.anchor_ratios = {0.5, 1.0, 2.0};
  cfg.rpn_pre_nms_top = 2000;
  cfg.rpn_post_nms_top = 300;
  cfg.support_size = 224;
  return cfg;
}

DetectorConfig detector_config_for(const std::string& kind) {
  if (kind == "tiny") return tiny_detector_config();
  if (kind == "full") return full_detector_config();
  throw std::invalid_argument("unknown detector kind: " + kind);
}

// ---- box utilities ----

double iou(const BBox& a, const BBox& b) {
  double ix = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  double iy = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (ix <= 0 || iy <= 0) return 0.0;
  double inter = ix * iy;
  double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

BBox clip_box(const BBox& b, int width, int height) {
  BBox out;
  out.x1 = std::clamp(b.x1, 0.0, static_cast<double>(width));
  out.y1 = std::clamp(b.y1, 0.0, static_cast<double>(height));
  out.x2 = std::clamp(b.x2, 0.0, static_cast<double>(width));
  out.y2 = std::clamp(b.y2, 0.0, static_cast<double>(height));
  return out;
}

std::array<double, 4> encode_box(const BBox& anchor, const BBox& gt) {
  double aw = anchor.width(), ah = anchor.height();
  double acx = anchor.x1 + aw / 2, acy = anchor.y1 + ah / 2;
  double gw = gt.width(), gh = gt.height();
  double gcx = gt.x1 + gw / 2, gcy = gt.y1 + gh / 2;
  return {(gcx - acx) / aw, (gcy - acy) / ah, std::log(gw / aw),
          std::log(gh / ah)};
}

BBox decode_box(const BBox& anchor, const std::array<double, 4>& deltas) {
  constexpr double kMaxExp = 4.135;  // log(1000/16)
  double aw = anchor.width(), ah = anchor.height();
  double acx = anchor.x1 + aw / 2, acy = anchor.y1 + ah / 2;
  double cx = acx + deltas[0] * aw;
  double cy = acy + deltas[1] * ah;
  double w = aw * std::exp(std::min(deltas[2], kMaxExp));
  double h = ah * std::exp(std::min(deltas[3], kMaxExp));
  return BBox{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
}

std::vector<int> nms(const std::vector<BBox>& boxes,
                     const std::vector<double>& scores, double thresh) {
  std::vector<int> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&scores](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;  // deterministic tie-break
  });
  std::vector<int> keep;
  std::vector<char> dead(boxes.size(), 0);
  for (size_t i = 0; i < order.size(); ++i) {
    int a = order[i];
    if (dead[a]) continue;
    keep.push_back(a);
    for (size_t j = i + 1; j < order.size(); ++j) {
      int b = order[j];
      if (!dead[b] && iou(boxes[a], boxes[b]) > thresh) dead[b] = 1;
    }
  }
  return keep;
}

// ---- backbone ----

void Backbone::build(const DetectorConfig& cfg, int in_channels) {
  convs.clear();
  int in_c = in_channels;
  for (size_t i = 0; i < cfg.conv_channels.size(); ++i) {
    convs.emplace_back("backbone.conv" + std::to_string(i), in_c,
                       cfg.conv_channels[i], 3, 1, 1);
    in_c = cfg.conv_channels[i];
  }
}

void Backbone::init(std::mt19937_64& rng) {
  for (auto& c : convs) c.init(rng);
}

std::vector<Param*> Backbone::parameters() {
  std::vector<Param*> out;
  for (auto& c : convs) {
    out.push_back(&c.w);
    out.push_back(&c.b);
  }
  return out;
}

Image normalize_image(const Image& img, const DetectorConfig& cfg) {
  Image out = img;
  for (auto& v : out.data) v -= cfg.pixel_mean;
  return out;
}

BackboneFeatures backbone_forward(const Backbone& bb, const Image& image,
                                  const DetectorConfig& cfg,
                                  BackboneCtx* ctx) {
  if (image.h < cfg.stride() || image.w < cfg.stride())
    throw std::invalid_argument("backbone: image smaller than one stride");
  if (ctx) {
    ctx->conv.resize(bb.convs.size());
    ctx->relu.resize(bb.convs.size());
    ctx->pool.resize(bb.convs.size());
  }
  Tensor3 x = image;
  for (size_t i = 0; i < bb.convs.size(); ++i) {
    x = conv_forward(bb.convs[i], x, ctx ? &ctx->conv[i] : nullptr);
    x = relu_forward(x, ctx ? &ctx->relu[i] : nullptr);
    x = maxpool2_forward(x, ctx ? &ctx->pool[i] : nullptr);
  }
  return BackboneFeatures{std::move(x), cfg.stride()};
}

Image backbone_backward(Backbone& bb, const BackboneCtx& ctx,
                        const Tensor3& gfeat) {
  Tensor3 g = gfeat;
  for (int i = static_cast<int>(bb.convs.size()) - 1; i >= 0; --i) {
    g = maxpool2_backward(ctx.pool[i], g);
    g = relu_backward(ctx.relu[i], g);
    g = conv_backward(bb.convs[i], ctx.conv[i], g);
  }
  return g;
}

// ---- RPN ----

void RpnHead::build(const DetectorConfig& cfg) {
  int c = cfg.feat_channels();
  int a = cfg.num_anchors();
  conv = ConvParam("rpn.conv", c, c, 3, 1, 1);
  cls = ConvParam("rpn.cls", c, a, 1, 1, 0);
  reg = ConvParam("rpn.reg", c, 4 * a, 1, 1, 0);
}

void RpnHead::init(std::mt19937_64& rng) {
  conv.init(rng);
  cls.init(rng);
  reg.init(rng);
}

std::vector<Param*> RpnHead::parameters() {
  return {&conv.w, &conv.b, &cls.w, &cls.b, &reg.w, &reg.b};
}

RpnOut rpn_forward(const RpnHead& head, const Tensor3& feat, RpnCtx* ctx) {
  Tensor3 h = conv_forward(head.conv, feat, ctx ? &ctx->conv : nullptr);
  h = relu_forward(h, ctx ? &ctx->relu : nullptr);
  RpnOut out;
  out.cls_logits = conv_forward(head.cls, h, ctx ? &ctx->cls : nullptr);
  out.reg_deltas = conv_forward(head.reg, h, ctx ? &ctx->reg : nullptr);
  return out;
}

Tensor3 rpn_backward(RpnHead& head, const RpnCtx& ctx, const Tensor3& gcls,
                     const Tensor3& greg) {
  Tensor3 gh = conv_backward(head.cls, ctx.cls, gcls);
  Tensor3 gh2 = conv_backward(head.reg, ctx.reg, greg);
  for (size_t i = 0; i < gh.data.size(); ++i) gh.data[i] += gh2.data[i];
  gh = relu_backward(ctx.relu, gh);
  return conv_backward(head.conv, ctx.conv, gh);
}

std::vector<BBox> generate_anchors(const DetectorConfig& cfg, int fh, int fw) {
  std::vector<BBox> anchors;
  anchors.reserve(static_cast<size_t>(fh) * fw * cfg.num_anchors());
  double stride = cfg.stride();
  for (int y = 0; y < fh; ++y)
    for (int x = 0; x < fw; ++x) {
      double cx = (x + 0.5) * stride;
      double cy = (y + 0.5) * stride;
      for (double scale : cfg.anchor_scales)
        for (double ratio : cfg.anchor_ratios) {
          double w = scale * std::sqrt(ratio);
          double h = scale / std::sqrt(ratio);
          anchors.push_back(BBox{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2});
        }
    }
  return anchors;
}

std::vector<Proposal> rpn_propose(const RpnOut& out,
                                  const std::vector<BBox>& anchors,
                                  int image_w, int image_h,
                                  const DetectorConfig& cfg) {
  int fh = out.cls_logits.h, fw = out.cls_logits.w;
  int a_per_cell = out.cls_logits.c;
  std::vector<double> scores;
  std::vector<BBox> boxes;
  scores.reserve(anchors.size());
  boxes.reserve(anchors.size());
  size_t anchor_idx = 0;
  for (int y = 0; y < fh; ++y)
    for (int x = 0; x < fw; ++x)
      for (int a = 0; a < a_per_cell; ++a, ++anchor_idx) {
        std::array<double, 4> d = {out.reg_deltas.at(4 * a + 0, y, x),
                                   out.reg_deltas.at(4 * a + 1, y, x),
                                   out.reg_deltas.at(4 * a + 2, y, x),
                                   out.reg_deltas.at(4 * a + 3, y, x)};
        BBox b = clip_box(decode_box(anchors[anchor_idx], d), image_w, image_h);
        if (b.width() < 1 || b.height() < 1) continue;
        boxes.push_back(b);
        scores.push_back(sigmoid(out.cls_logits.at(a, y, x)));
      }

  // pre-NMS top-N by score
  std::vector<int> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&scores](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  if (static_cast<int>(order.size()) > cfg.rpn_pre_nms_top)
    order.resize(cfg.rpn_pre_nms_top);
  std::vector<BBox> top_boxes;
  std::vector<double> top_scores;
  for (int i : order) {
    top_boxes.push_back(boxes[i]);
    top_scores.push_back(scores[i]);
  }
  std::vector<int> keep = nms(top_boxes, top_scores, cfg.rpn_nms_thresh);
  if (static_cast<int>(keep.size()) > cfg.rpn_post_nms_top)
    keep.resize(cfg.rpn_post_nms_top);
  std::vector<Proposal> props;
  for (int i : keep) props.push_back({top_boxes[i], top_scores[i]});
  return props;
}

// ---- RoIAlign ----

Tensor3 roi_align(const BackboneFeatures& feat, const BBox& box, int pool_size,
                  RoiAlignCtx* ctx) {
  if (!(box.width() > 0 && box.height() > 0))
    throw std::invalid_argument("roi_align: degenerate proposal");
  const Tensor3& f = feat.map;
  double scale = 1.0 / feat.stride;
  double x1 = box.x1 * scale, y1 = box.y1 * scale;
  double bw = box.width() * scale / pool_size;
  double bh = box.height() * scale / pool_size;

  Tensor3 out(f.c, pool_size, pool_size);
  if (ctx) {
    ctx->c = f.c;
    ctx->fh = f.h;
    ctx->fw = f.w;
    ctx->pool = pool_size;
    ctx->idx.assign(static_cast<size_t>(pool_size) * pool_size, {});
    ctx->wgt.assign(static_cast<size_t>(pool_size) * pool_size, {});
  }
  for (int py = 0; py < pool_size; ++py)
    for (int px = 0; px < pool_size; ++px) {
      // one sample at the bin center, feature values at cell centers
      double sx = x1 + (px + 0.5) * bw - 0.5;
      double sy = y1 + (py + 0.5) * bh - 0.5;
      sx = std::clamp(sx, 0.0, static_cast<double>(f.w - 1));
      sy = std::clamp(sy, 0.0, static_cast<double>(f.h - 1));
      int x0 = static_cast<int>(std::floor(sx));
      int y0 = static_cast<int>(std::floor(sy));
      int x1i = std::min(x0 + 1, f.w - 1);
      int y1i = std::min(y0 + 1, f.h - 1);
      double fx = sx - x0, fy = sy - y0;
      double w00 = (1 - fy) * (1 - fx), w01 = (1 - fy) * fx;
      double w10 = fy * (1 - fx), w11 = fy * fx;
      std::array<int, 4> idx = {y0 * f.w + x0, y0 * f.w + x1i,
                                y1i * f.w + x0, y1i * f.w + x1i};
      std::array<double, 4> wgt = {w00, w01, w10, w11};
      for (int ci = 0; ci < f.c; ++ci) {
        const double* plane = &f.data[static_cast<size_t>(ci) * f.h * f.w];
        out.at(ci, py, px) = wgt[0] * plane[idx[0]] + wgt[1] * plane[idx[1]] +
                             wgt[2] * plane[idx[2]] + wgt[3] * plane[idx[3]];
      }
      if (ctx) {
        ctx->idx[static_cast<size_t>(py) * pool_size + px] = idx;
        ctx->wgt[static_cast<size_t>(py) * pool_size + px] = wgt;
      }
    }
  return out;
}

Tensor3 roi_align_backward(const RoiAlignCtx& ctx, const Tensor3& gy) {
  Tensor3 gx(ctx.c, ctx.fh, ctx.fw);
  for (int py = 0; py < ctx.pool; ++py)
    for (int px = 0; px < ctx.pool; ++px) {
      const auto& idx = ctx.idx[static_cast<size_t>(py) * ctx.pool + px];
      const auto& wgt = ctx.wgt[static_cast<size_t>(py) * ctx.pool + px];
      for (int ci = 0; ci < ctx.c; ++ci) {
        double g = gy.at(ci, py, px);
        double* plane = &gx.data[static_cast<size_t>(ci) * ctx.fh * ctx.fw];
        for (int s = 0; s < 4; ++s) plane[idx[s]] += wgt[s] * g;
      }
    }
  return gx;
}

// ---- RoI head ----

void RoiHead::build(const DetectorConfig& cfg) {
  int in = cfg.feat_channels() * cfg.roi_pool_size * cfg.roi_pool_size;
  fc1 = LinearParam("roi_head.fc1", in, cfg.roi_hidden);
  fc2 = LinearParam("roi_head.fc2", cfg.roi_hidden, cfg.feature_dim);
}

void RoiHead::init(std::mt19937_64& rng) {
  fc1.init(rng);
  fc2.init(rng);
}

std::vector<Param*> RoiHead::parameters() {
  return {&fc1.w, &fc1.b, &fc2.w, &fc2.b};
}

Mat roi_head_forward(const RoiHead& head, const Mat& pooled, RoiHeadCtx* ctx) {
  Mat h = linear_forward(head.fc1, pooled, ctx ? &ctx->fc1 : nullptr);
  h = relu_forward(h, ctx ? &ctx->r1 : nullptr);
  h = linear_forward(head.fc2, h, ctx ? &ctx->fc2 : nullptr);
  return relu_forward(h, ctx ? &ctx->r2 : nullptr);
}

Mat roi_head_backward(RoiHead& head, const RoiHeadCtx& ctx, const Mat& gy) {
  Mat g = relu_backward(ctx.r2, gy);
  g = linear_backward(head.fc2, ctx.fc2, g);
  g = relu_backward(ctx.r1, g);
  return linear_backward(head.fc1, ctx.fc1, g);
}

Mat stack_pooled(const std::vector<Tensor3>& pooled) {
  if (pooled.empty()) return Mat();
  Mat out(pooled[0].size(), pooled.size());
  for (size_t i = 0; i < pooled.size(); ++i)
    out.col(static_cast<Eigen::Index>(i)) = flatten(pooled[i]);
  return out;
}

// ---- predict head ----

void PredictHead::build(const DetectorConfig& cfg, int num_classes) {
  if (num_classes <= 0)
    throw std::invalid_argument("predict head needs at least one class");
  cls = LinearParam("predict.cls", cfg.feature_dim, num_classes + 1);
  reg = LinearParam("predict.reg", cfg.feature_dim, 4 * num_classes);
}

void PredictHead::init(std::mt19937_64& rng) {
  cls.init(rng);
  reg.init(rng);
}

std::vector<Param*> PredictHead::parameters() {
  return {&cls.w, &cls.b, &reg.w, &reg.b};
}

PredictOut predict_head_forward(const PredictHead& head, const Mat& feats,
                                PredictCtx* ctx) {
  PredictOut out;
  out.cls_logits = linear_forward(head.cls, feats, ctx ? &ctx->cls : nullptr);
  out.reg_deltas = linear_forward(head.reg, feats, ctx ? &ctx->reg : nullptr);
  return out;
}

Mat predict_head_backward(PredictHead& head, const PredictCtx& ctx,
                          const Mat& gcls, const Mat& greg) {
  Mat g = linear_backward(head.cls, ctx.cls, gcls);
  g += linear_backward(head.reg, ctx.reg, greg);
  return g;
}

// ---- whole detector ----

void Detector::build(const DetectorConfig& config, int num_classes,
                     std::uint64_t seed) {
  cfg = config;
  backbone.build(cfg);
  rpn.build(cfg);
  roi_head.build(cfg);
  predict.build(cfg, num_classes);
  auto rng = make_rng(seed, "detector_init");
  backbone.init(rng);
  rpn.init(rng);
  roi_head.init(rng);
  predict.init(rng);
}

std::vector<Param*> Detector::parameters() {
  std::vector<Param*> out;
  for (Param* p : backbone.parameters()) out.push_back(p);
  for (Param* p : rpn.parameters()) out.push_back(p);
  for (Param* p : roi_head.parameters()) out.push_back(p);
  for (Param* p : predict.parameters()) out.push_back(p);
  return out;
}

void expand_predict_head(Detector& det, int new_num_classes,
                         std::mt19937_64& rng) {
  int old_k = det.predict.num_classes();
  if (new_num_classes <= old_k)
    throw std::invalid_argument("predict head can only grow");
  PredictHead grown;
  grown.build(det.cfg, new_num_classes);
  std::uniform_real_distribution<double> small(-0.01, 0.01);
  auto fill_small = [&](Mat& m) {
    for (int j = 0; j < m.cols(); ++j)
      for (int i = 0; i < m.rows(); ++i) m(i, j) = small(rng);
  };
  fill_small(grown.cls.w.value);
  fill_small(grown.reg.w.value);
  grown.cls.b.value.setZero();
  grown.reg.b.value.setZero();
  grown.cls.w.value.topRows(old_k + 1) = det.predict.cls.w.value;
  grown.cls.b.value.topRows(old_k + 1) = det.predict.cls.b.value;
  grown.reg.w.value.topRows(4 * old_k) = det.predict.reg.w.value;
  grown.reg.b.value.topRows(4 * old_k) = det.predict.reg.b.value;
  det.predict = std::move(grown);
}

// ---- parameter archives ----

static constexpr char kArchiveMagic[8] = {'F', 'S', 'D', 'E', 'T', 'C', 'K', '1'};

void save_param_archive(const std::string& path,
                        const std::vector<Param*>& params) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f.write(kArchiveMagic, sizeof(kArchiveMagic));
  std::int64_t n = static_cast<std::int64_t>(params.size());
  f.write(reinterpret_cast<const char*>(&n), sizeof(n));
  for (const Param* p : params) {
    std::int64_t name_len = static_cast<std::int64_t>(p->name.size());
    std::int64_t rows = p->value.rows(), cols = p->value.cols();
    f.write(reinterpret_cast<const char*>(&name_len), sizeof(name_len));
    f.write(p->name.data(), name_len);
    f.write(reinterpret_cast<const char*>(&rows), sizeof(rows));
    f.write(reinterpret_cast<const char*>(&cols), sizeof(cols));
    f.write(reinterpret_cast<const char*>(p->value.data()),
            sizeof(double) * rows * cols);
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

void load_param_archive(const std::string& path,
                        const std::vector<Param*>& params) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path);
  char magic[8];
  f.read(magic, sizeof(magic));
  if (std::memcmp(magic, kArchiveMagic, sizeof(magic)) != 0)
    throw std::runtime_error("not a parameter archive: " + path);
  std::int64_t n = 0;
  f.read(reinterpret_cast<char*>(&n), sizeof(n));
  std::map<std::string, Mat> loaded;
  for (std::int64_t i = 0; i < n; ++i) {
    std::int64_t name_len = 0, rows = 0, cols = 0;
    f.read(reinterpret_cast<char*>(&name_len), sizeof(name_len));
    std::string name(static_cast<size_t>(name_len), '\0');
    f.read(name.data(), name_len);
    f.read(reinterpret_cast<char*>(&rows), sizeof(rows));
    f.read(reinterpret_cast<char*>(&cols), sizeof(cols));
    Mat m(rows, cols);
    f.read(reinterpret_cast<char*>(m.data()), sizeof(double) * rows * cols);
    loaded.emplace(std::move(name), std::move(m));
  }
  if (!f) throw std::runtime_error("truncated archive: " + path);
  for (Param* p : params) {
    auto it = loaded.find(p->name);
    if (it == loaded.end())
      throw std::runtime_error("archive missing parameter " + p->name);
    if (it->second.rows() != p->value.rows() ||
        it->second.cols() != p->value.cols())
      throw std::runtime_error("shape mismatch for parameter " + p->name);
    p->value = it->second;
  }
}

}  // namespace fsdet
