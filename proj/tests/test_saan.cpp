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

#include <random>

#include "fsdet/rng.hpp"
#include "fsdet/saan.hpp"

using namespace fsdet;

namespace {

void randomize(Mat& m, std::mt19937_64& rng, double bound = 1.0) {
  std::uniform_real_distribution<double> d(-bound, bound);
  for (int i = 0; i < m.size(); ++i) m.data()[i] = d(rng);
}

Vec random_vec(int d, std::mt19937_64& rng, double bound = 1.0) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Vec v(d);
  for (int i = 0; i < d; ++i) v(i) = dist(rng);
  return v;
}

// scalar-loop reimplementation of the gated cell, element by element
Vec cell_oracle(const Vec& x, const Vec& h, const GruWeights& gw) {
  int d = gw.dim();
  Vec cat(2 * d);
  for (int i = 0; i < d; ++i) cat(i) = x(i);
  for (int i = 0; i < d; ++i) cat(d + i) = h(i);
  Vec r(d), z(d), hp(d), out(d);
  for (int i = 0; i < d; ++i) {
    double ar = 0, az = 0;
    for (int j = 0; j < 2 * d; ++j) {
      ar += gw.wr.value(i, j) * cat(j);
      az += gw.wz.value(i, j) * cat(j);
    }
    r(i) = 1.0 / (1.0 + std::exp(-ar));
    z(i) = 1.0 / (1.0 + std::exp(-az));
  }
  for (int i = 0; i < d; ++i) {
    double a = 0;
    for (int j = 0; j < d; ++j)
      a += gw.w.value(i, j) * x(j) + gw.u.value(i, j) * (r(j) * h(j));
    hp(i) = std::tanh(a);
  }
  for (int i = 0; i < d; ++i) out(i) = z(i) * h(i) + (1.0 - z(i)) * hp(i);
  return out;
}

GruWeights random_gru(int d, std::mt19937_64& rng) {
  GruWeights gw(d);
  gw.init(rng);
  return gw;
}

}  // namespace

TEST_CASE("gated cell matches the scalar-loop oracle at d=8") {
  auto rng = make_rng(1, "cell");
  for (int t = 0; t < 200; ++t) {
    GruWeights gw = random_gru(8, rng);
    Vec x = random_vec(8, rng), h = random_vec(8, rng);
    Vec got = relation_gru_cell(x, h, gw);
    Vec want = cell_oracle(x, h, gw);
    for (int i = 0; i < 8; ++i)
      CHECK(std::abs(got(i) - want(i)) <=
            1e-6 * std::max(1.0, std::abs(want(i))));
  }
}

TEST_CASE("zero weights: gates are exactly 0.5 and H = 0.5 * h_prev") {
  GruWeights gw(5);  // all matrices start at zero
  auto rng = make_rng(2, "zero");
  Vec x = random_vec(5, rng), v = random_vec(5, rng);
  GruCellCtx ctx;
  Vec out = relation_gru_cell(x, v, gw, &ctx);
  for (int i = 0; i < 5; ++i) {
    CHECK(ctx.r(i) == 0.5);
    CHECK(ctx.z(i) == 0.5);
    CHECK(ctx.hp(i) == 0.0);
    CHECK(out(i) == doctest::Approx(0.5 * v(i)).epsilon(1e-15));
  }
}

TEST_CASE("W = 0 and h_prev = 0 pin the output to zero for any gates") {
  auto rng = make_rng(3, "pinned");
  GruWeights gw = random_gru(6, rng);
  gw.w.value.setZero();
  gw.u.value.setZero();
  Vec x = random_vec(6, rng);
  Vec out = relation_gru_cell(x, Vec::Zero(6), gw);
  CHECK(out.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("cell backward matches central finite differences") {
  auto rng = make_rng(4, "grad");
  const double fd_eps = 1e-3;  // 64-bit arithmetic throughout
  for (int trial = 0; trial < 20; ++trial) {
    int d = 8;
    GruWeights gw = random_gru(d, rng);
    Vec x = random_vec(d, rng), h = random_vec(d, rng);
    Vec gh = random_vec(d, rng);

    GruCellCtx ctx;
    relation_gru_cell(x, h, gw, &ctx);
    for (Param* p : gw.parameters()) p->zero_grad();
    auto [gx, ghp] = relation_gru_cell_backward(gw, ctx, gh);

    auto loss = [&]() { return relation_gru_cell(x, h, gw).dot(gh); };
    auto check = [&](double analytic, double* slot) {
      double orig = *slot;
      *slot = orig + fd_eps;
      double up = loss();
      *slot = orig - fd_eps;
      double dn = loss();
      *slot = orig;
      double fd = (up - dn) / (2 * fd_eps);
      CHECK(std::abs(analytic - fd) <= 1e-4 * std::max(1.0, std::abs(fd)));
    };
    for (int i = 0; i < d; ++i) check(gx(i), &x(i));
    for (int i = 0; i < d; ++i) check(ghp(i), &h(i));
    for (Param* p : gw.parameters())
      for (int i = 0; i < p->value.size(); i += 7)
        check(p->grad.data()[i], &p->value.data()[i]);
  }
}

TEST_CASE("fusion over C classes with zero weights scales by 0.5^C") {
  auto rng = make_rng(5, "fuse0");
  for (int C : {1, 2, 3, 5}) {
    GruWeights gw(4);
    SupportFeatureBank bank;
    bank.vectors = Mat(4, C);
    randomize(bank.vectors, rng);
    for (int c = 0; c < C; ++c) bank.class_ids.push_back(c);
    Vec roi = random_vec(4, rng);
    Vec fused = fuse_roi_with_supports(roi, bank, gw);
    double scale = std::pow(0.5, C);
    for (int i = 0; i < 4; ++i)
      CHECK(fused(i) == doctest::Approx(scale * roi(i)).epsilon(1e-12));
  }
}

TEST_CASE("C=1 fusion is one cell; batch columns are independent") {
  auto rng = make_rng(6, "fuse1");
  GruWeights gw = random_gru(8, rng);
  SupportFeatureBank bank;
  bank.vectors = Mat(8, 1);
  randomize(bank.vectors, rng);
  bank.class_ids = {0};
  Vec roi = random_vec(8, rng);
  Vec fused = fuse_roi_with_supports(roi, bank, gw);
  Vec cell = relation_gru_cell(bank.vectors.col(0), roi, gw);
  CHECK((fused - cell).cwiseAbs().maxCoeff() == 0.0);

  FewShotModel model;
  model.fusion = FusionMode::kGru;
  model.gru = gw;
  Mat batch(8, 3);
  randomize(batch, rng);
  Mat fused_batch = fuse_batch(model, batch, &bank);
  for (int i = 0; i < 3; ++i) {
    Vec one = fuse_roi_with_supports(batch.col(i), bank, gw);
    CHECK((fused_batch.col(i) - one).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("fusion iterates support classes in ascending class id") {
  auto rng = make_rng(7, "order");
  GruWeights gw = random_gru(4, rng);
  SupportFeatureBank bank;
  bank.vectors = Mat(4, 2);
  randomize(bank.vectors, rng);
  bank.class_ids = {2, 5};
  Vec roi = random_vec(4, rng);
  Vec fused = fuse_roi_with_supports(roi, bank, gw);
  Vec step1 = relation_gru_cell(bank.vectors.col(0), roi, gw);
  Vec step2 = relation_gru_cell(bank.vectors.col(1), step1, gw);
  CHECK((fused - step2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("fuse_backward matches finite differences through C cells") {
  auto rng = make_rng(8, "fusegrad");
  const double fd_eps = 1e-3;
  int d = 6, C = 3;
  GruWeights gw = random_gru(d, rng);
  SupportFeatureBank bank;
  bank.vectors = Mat(d, C);
  randomize(bank.vectors, rng);
  bank.class_ids = {0, 1, 2};
  Vec roi = random_vec(d, rng), gout = random_vec(d, rng);

  FuseCtx ctx;
  fuse_roi_with_supports(roi, bank, gw, &ctx);
  for (Param* p : gw.parameters()) p->zero_grad();
  auto [groi, gbank] = fuse_backward(gw, ctx, gout);

  auto loss = [&]() { return fuse_roi_with_supports(roi, bank, gw).dot(gout); };
  auto check = [&](double analytic, double* slot) {
    double orig = *slot;
    *slot = orig + fd_eps;
    double up = loss();
    *slot = orig - fd_eps;
    double dn = loss();
    *slot = orig;
    double fd = (up - dn) / (2 * fd_eps);
    CHECK(std::abs(analytic - fd) <= 1e-4 * std::max(1.0, std::abs(fd)));
  };
  for (int i = 0; i < d; ++i) check(groi(i), &roi(i));
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < d; ++i) check(gbank(i, c), &bank.vectors(i, c));
  for (Param* p : gw.parameters())
    for (int i = 0; i < p->value.size(); i += 5)
      check(p->grad.data()[i], &p->value.data()[i]);
}

TEST_CASE("cross-correlation baseline: identity, zero, scalar oracle") {
  auto rng = make_rng(9, "xcorr");
  Vec roi = random_vec(8, rng);
  CHECK((depthwise_cross_correlation(roi, Vec::Ones(8)) - roi)
            .cwiseAbs()
            .maxCoeff() == 0.0);
  CHECK(depthwise_cross_correlation(roi, Vec::Zero(8)).cwiseAbs().maxCoeff() ==
        0.0);
  Vec s = random_vec(8, rng);
  Vec got = depthwise_cross_correlation(roi, s);
  for (int i = 0; i < 8; ++i) CHECK(got(i) == roi(i) * s(i));
}

TEST_CASE("support encoding: C vectors, shared-encoder determinism, mean") {
  DetectorConfig cfg = tiny_detector_config();
  cfg.support_size = 32;
  Detector det;
  det.build(cfg, 3, 21);

  auto rng = make_rng(10, "supports");
  std::uniform_real_distribution<double> d(0.0, 1.0);
  auto random_crop = [&](int cls, long ann) {
    SupportImage s;
    s.pixels = Image(3, 32, 32);
    for (auto& v : s.pixels.data) v = d(rng);
    s.class_id = cls;
    s.annotation_id = ann;
    return s;
  };

  SupportImage a = random_crop(0, 1), b = random_crop(1, 2),
               c = random_crop(2, 3);
  SupportFeatureBank bank = support_encode(det, {a, b, c});
  CHECK(bank.size() == 3);
  CHECK(bank.class_ids == std::vector<int>{0, 1, 2});
  CHECK(bank.vectors.rows() == cfg.feature_dim);

  // identical pixels under two different class labels encode identically
  SupportImage a_as_1 = a;
  a_as_1.class_id = 1;
  SupportFeatureBank twin = support_encode(det, {a, a_as_1});
  CHECK((twin.vectors.col(0) - twin.vectors.col(1)).cwiseAbs().maxCoeff() ==
        0.0);

  // k=2 reduces to the elementwise mean of the single-crop encodings
  SupportImage a2 = random_crop(0, 4);
  SupportFeatureBank one = support_encode(det, {a});
  SupportFeatureBank two = support_encode(det, {a2});
  SupportFeatureBank both = support_encode(det, {a, a2});
  Vec mean = 0.5 * (one.vectors.col(0) + two.vectors.col(0));
  CHECK((both.vectors.col(0) - mean).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("baseline model exposes no GRU parameters") {
  DetectorConfig cfg = tiny_detector_config();
  FewShotModel with, without;
  with.fusion = FusionMode::kGru;
  without.fusion = FusionMode::kNone;
  with.detector.build(cfg, 2, 1);
  without.detector.build(cfg, 2, 1);
  with.gru = GruWeights(cfg.feature_dim);
  without.gru = GruWeights(cfg.feature_dim);
  CHECK(with.parameters().size() == without.parameters().size() + 4);
  for (Param* p : without.parameters())
    CHECK(p->name.rfind("gru.", 0) != 0);
}
