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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <random>

#include "fsdet/detector.hpp"
#include "fsdet/rng.hpp"

using namespace fsdet;

namespace {

// independent quadratic suppression oracle
std::vector<int> nms_oracle(const std::vector<BBox>& boxes,
                            const std::vector<double>& scores, double thresh) {
  std::vector<int> order(boxes.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores[a] > scores[b]; });
  std::vector<int> keep;
  for (int cand : order) {
    bool suppressed = false;
    for (int kept : keep)
      if (iou(boxes[cand], boxes[kept]) > thresh) suppressed = true;
    if (!suppressed) keep.push_back(cand);
  }
  return keep;
}

}  // namespace

TEST_CASE("iou worked examples") {
  BBox a{0, 0, 10, 10};
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(a, BBox{20, 20, 30, 30}) == 0.0);
  CHECK(iou(a, BBox{5, 0, 15, 10}) == doctest::Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("encode_box and decode_box are inverse") {
  auto rng = make_rng(1, "codec");
  std::uniform_real_distribution<double> d(5.0, 80.0);
  for (int t = 0; t < 200; ++t) {
    BBox anchor{d(rng), d(rng), 0, 0};
    anchor.x2 = anchor.x1 + d(rng);
    anchor.y2 = anchor.y1 + d(rng);
    BBox gt{d(rng), d(rng), 0, 0};
    gt.x2 = gt.x1 + d(rng);
    gt.y2 = gt.y1 + d(rng);
    BBox back = decode_box(anchor, encode_box(anchor, gt));
    CHECK(back.x1 == doctest::Approx(gt.x1).epsilon(1e-9));
    CHECK(back.y1 == doctest::Approx(gt.y1).epsilon(1e-9));
    CHECK(back.x2 == doctest::Approx(gt.x2).epsilon(1e-9));
    CHECK(back.y2 == doctest::Approx(gt.y2).epsilon(1e-9));
  }
}

TEST_CASE("nms matches the brute-force oracle on random inputs") {
  auto rng = make_rng(2, "nms");
  std::uniform_real_distribution<double> pos(0.0, 60.0), len(4.0, 30.0),
      sc(0.0, 1.0);
  for (int t = 0; t < 300; ++t) {
    std::uniform_int_distribution<int> nd(1, 40);
    int n = nd(rng);
    std::vector<BBox> boxes;
    std::vector<double> scores;
    for (int i = 0; i < n; ++i) {
      BBox b{pos(rng), pos(rng), 0, 0};
      b.x2 = b.x1 + len(rng);
      b.y2 = b.y1 + len(rng);
      boxes.push_back(b);
      scores.push_back(sc(rng));
    }
    CHECK(nms(boxes, scores, 0.5) == nms_oracle(boxes, scores, 0.5));
  }
}

TEST_CASE("nms suppresses the lower-scored of an overlapping pair") {
  std::vector<BBox> boxes = {{0, 0, 10, 10}, {1, 1, 11, 11}};
  std::vector<double> scores = {0.9, 0.8};
  CHECK(nms(boxes, scores, 0.5) == std::vector<int>{0});
  // equal scores keep the lower index
  scores = {0.7, 0.7};
  CHECK(nms(boxes, scores, 0.5) == std::vector<int>{0});
}

TEST_CASE("backbone shape contract and zero-input bias propagation") {
  DetectorConfig cfg = tiny_detector_config();
  REQUIRE(cfg.stride() == 8);
  Backbone bb;
  bb.build(cfg);
  auto rng = make_rng(3, "bb");
  bb.init(rng);
  std::uniform_real_distribution<double> d(-0.5, 0.5);
  for (auto& conv : bb.convs)
    for (int i = 0; i < conv.b.value.rows(); ++i) conv.b.value(i, 0) = d(rng);

  Image img(3, 96, 96);
  img.fill(cfg.pixel_mean);  // normalizes to exactly zero
  BackboneFeatures feat =
      backbone_forward(bb, normalize_image(img, cfg), cfg);
  CHECK(feat.stride == 8);
  CHECK(feat.map.h == 12);
  CHECK(feat.map.w == 12);

  // independent path: for a constant input the interior of each layer is
  // the constant relu(b + const * sum(w)); check the map center
  std::vector<double> layer_in(3, 0.0);
  std::vector<double> layer_out;
  for (const auto& conv : bb.convs) {
    layer_out.assign(conv.out_c, 0.0);
    for (int oc = 0; oc < conv.out_c; ++oc) {
      double acc = conv.b.value(oc, 0);
      for (int ic = 0; ic < conv.in_c; ++ic)
        for (int kk = 0; kk < conv.k * conv.k; ++kk)
          acc += conv.w.value(oc, ic * conv.k * conv.k + kk) * layer_in[ic];
      layer_out[oc] = std::max(acc, 0.0);
    }
    layer_in = layer_out;  // maxpool of a constant is the constant
  }
  for (int c = 0; c < feat.map.c; ++c)
    CHECK(feat.map.at(c, 6, 6) ==
          doctest::Approx(layer_out[c]).epsilon(1e-9));

  // too-small input is rejected
  Image tiny_img(3, 4, 4);
  tiny_img.fill(0.0);
  CHECK_THROWS(backbone_forward(bb, tiny_img, cfg));
}

TEST_CASE("generate_anchors covers every cell with A anchors") {
  DetectorConfig cfg = tiny_detector_config();
  auto anchors = generate_anchors(cfg, 4, 5);
  CHECK(anchors.size() == 4u * 5u * cfg.num_anchors());
  // anchor 0 of cell (0,0) is centered on (0.5*stride, 0.5*stride)
  const BBox& a0 = anchors[0];
  CHECK((a0.x1 + a0.x2) / 2 == doctest::Approx(0.5 * cfg.stride()));
  CHECK((a0.y1 + a0.y2) / 2 == doctest::Approx(0.5 * cfg.stride()));
  // scale/ratio geometry: area ~ scale^2, aspect ~ ratio
  double w = a0.x2 - a0.x1, h = a0.y2 - a0.y1;
  CHECK(w * h == doctest::Approx(cfg.anchor_scales[0] * cfg.anchor_scales[0]));
  CHECK(h / w == doctest::Approx(1.0 / cfg.anchor_ratios[0]).epsilon(1e-9));
}

TEST_CASE("roi_align: constant map, identity window, analytic ramp") {
  BackboneFeatures feat;
  feat.stride = 8;
  feat.map = Tensor3(2, 6, 6);

  SUBCASE("constant field") {
    feat.map.fill(0.625);
    Tensor3 out = roi_align(feat, BBox{4, 4, 44, 44}, 7);
    for (double v : out.data) CHECK(v == doctest::Approx(0.625));
  }

  SUBCASE("full map with P = map size is the identity") {
    for (int c = 0; c < 2; ++c)
      for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 6; ++x)
          feat.map.at(c, y, x) = 0.01 * (c + 1) * (10 * y + x);
    Tensor3 out = roi_align(feat, BBox{0, 0, 48, 48}, 6);
    for (int c = 0; c < 2; ++c)
      for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 6; ++x)
          CHECK(out.at(c, y, x) ==
                doctest::Approx(feat.map.at(c, y, x)).epsilon(1e-12));
  }

  SUBCASE("linear ramp matches closed-form bilinear interpolation") {
    for (int c = 0; c < 2; ++c)
      for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 6; ++x)
          feat.map.at(c, y, x) = (c == 0 ? x : y) * 1.0;
    BBox box{8, 8, 40, 32};  // feature coords 1..5 x 1..4
    int P = 4;
    Tensor3 out = roi_align(feat, box, P);
    for (int py = 0; py < P; ++py)
      for (int px = 0; px < P; ++px) {
        double fx = (box.x1 + (px + 0.5) * (box.x2 - box.x1) / P) / 8.0;
        double fy = (box.y1 + (py + 0.5) * (box.y2 - box.y1) / P) / 8.0;
        // a linear field interpolates to the sample coordinate itself
        CHECK(out.at(0, py, px) == doctest::Approx(fx - 0.5).epsilon(1e-12));
        CHECK(out.at(1, py, px) == doctest::Approx(fy - 0.5).epsilon(1e-12));
      }
  }

  SUBCASE("degenerate boxes are rejected") {
    feat.map.fill(0.0);
    CHECK_THROWS(roi_align(feat, BBox{10, 10, 10, 20}, 7));
  }
}

TEST_CASE("roi head: zero through zero, hand matmul on identity weights") {
  DetectorConfig cfg = tiny_detector_config();
  RoiHead head;
  head.build(cfg);
  // zero weights, zero bias, zero input -> zero output
  int in_dim = cfg.feat_channels() * cfg.roi_pool_size * cfg.roi_pool_size;
  Mat zeros = Mat::Zero(in_dim, 2);
  RoiHeadCtx ctx;
  Mat out = roi_head_forward(head, zeros, &ctx);
  CHECK(out.rows() == cfg.feature_dim);
  CHECK(out.cols() == 2);
  CHECK(out.cwiseAbs().maxCoeff() == 0.0);

  // identity-like fc1 and a small hand-checked fc2
  head.fc1.w.value.setZero();
  for (int i = 0; i < cfg.feature_dim; ++i) head.fc1.w.value(i, i) = 1.0;
  head.fc2.w.value.setZero();
  head.fc2.w.value(0, 0) = 2.0;
  head.fc2.w.value(1, 0) = -3.0;
  head.fc2.b.value(1, 0) = 0.25;
  Mat x = Mat::Zero(in_dim, 1);
  x(0, 0) = 1.5;
  Mat y = roi_head_forward(head, x, &ctx);
  CHECK(y(0, 0) == doctest::Approx(3.0));   // relu(2 * 1.5)
  CHECK(y(1, 0) == doctest::Approx(0.0));   // relu(-4.5 + 0.25) clamps
}

TEST_CASE("predict head shapes, uniform scores at zero, expansion") {
  DetectorConfig cfg = tiny_detector_config();
  PredictHead head;
  head.build(cfg, 3);
  CHECK(head.cls.out_dim() == 4);   // K + 1 with background row 0
  CHECK(head.reg.out_dim() == 12);  // 4K

  Mat feats = Mat::Zero(cfg.feature_dim, 1);
  PredictCtx ctx;
  head.cls.w.value.setZero();
  head.cls.b.value.setZero();
  PredictOut out = predict_head_forward(head, feats, &ctx);
  Vec probs = softmax(out.cls_logits.col(0));
  for (int i = 0; i < 4; ++i)
    CHECK(probs(i) == doctest::Approx(0.25).epsilon(1e-12));

  Detector det;
  det.build(cfg, 3, 17);
  Mat cls_before = det.predict.cls.w.value;
  Mat reg_before = det.predict.reg.w.value;
  Vec logits_before = predict_head_forward(det.predict, feats, &ctx)
                          .cls_logits.col(0);

  auto rng = make_rng(99, "expand");
  expand_predict_head(det, 4, rng);
  CHECK(det.predict.cls.out_dim() == 5);
  CHECK(det.predict.reg.out_dim() == 16);
  CHECK(det.predict.cls.w.value.topRows(4) == cls_before);
  CHECK(det.predict.reg.w.value.topRows(12) == reg_before);

  Vec logits_after = predict_head_forward(det.predict, feats, &ctx)
                         .cls_logits.col(0);
  for (int i = 0; i < 4; ++i)
    CHECK(logits_after(i) == logits_before(i));  // bit-exact preservation

  // new rows follow the documented U(-0.01, 0.01) scheme
  auto new_row = det.predict.cls.w.value.row(4);
  CHECK(new_row.cwiseAbs().maxCoeff() <= 0.01);
  CHECK(new_row.cwiseAbs().maxCoeff() > 0.0);
  CHECK(det.predict.cls.b.value(4, 0) == 0.0);
}

TEST_CASE("rpn_propose respects the post-NMS cap and suppression") {
  DetectorConfig cfg = tiny_detector_config();
  Detector det;
  det.build(cfg, 2, 5);
  Image img(3, 96, 96);
  auto rng = make_rng(6, "img");
  std::uniform_real_distribution<double> d(0.0, 1.0);
  for (auto& v : img.data) v = d(rng);
  BackboneFeatures feat =
      backbone_forward(det.backbone, normalize_image(img, cfg), cfg);
  RpnCtx rctx;
  RpnOut out = rpn_forward(det.rpn, feat.map, &rctx);
  auto anchors = generate_anchors(cfg, feat.map.h, feat.map.w);
  auto props = rpn_propose(out, anchors, 96, 96, cfg);
  CHECK(props.size() <= static_cast<size_t>(cfg.rpn_post_nms_top));
  for (size_t i = 0; i + 1 < props.size(); ++i) {
    CHECK(props[i].score >= props[i + 1].score);
    for (size_t j = i + 1; j < props.size(); ++j)
      CHECK(iou(props[i].box, props[j].box) <= cfg.rpn_nms_thresh + 1e-12);
  }
  for (const auto& p : props) {
    CHECK(p.box.x1 >= 0);
    CHECK(p.box.y1 >= 0);
    CHECK(p.box.x2 <= 96);
    CHECK(p.box.y2 <= 96);
  }
}

TEST_CASE("parameter archive round-trips bit-exactly") {
  DetectorConfig cfg = tiny_detector_config();
  Detector a, b;
  a.build(cfg, 3, 11);
  b.build(cfg, 3, 22);
  std::string path =
      (std::filesystem::temp_directory_path() / "fsdet_arch.bin").string();
  save_param_archive(path, a.parameters());
  load_param_archive(path, b.parameters());
  auto pa = a.parameters(), pb = b.parameters();
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->value == pb[i]->value);
}
