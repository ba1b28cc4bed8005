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

#include "fsdet/nn.hpp"
#include "fsdet/rng.hpp"

using namespace fsdet;

namespace {

void randomize(Tensor3& t, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  for (auto& v : t.data) v = d(rng);
}

// scalar loss = weighted sum of the outputs, so dL/dy is `wy`
double weighted_sum(const Tensor3& y, const Tensor3& wy) {
  double s = 0;
  for (size_t i = 0; i < y.data.size(); ++i) s += y.data[i] * wy.data[i];
  return s;
}

constexpr double kEps = 1e-5;
constexpr double kTol = 1e-6;  // |analytic - fd| / max(1, |fd|)

void check_close(double analytic, double fd) {
  CHECK(std::abs(analytic - fd) / std::max(1.0, std::abs(fd)) < kTol);
}

}  // namespace

TEST_CASE("conv_forward matches a direct nested-loop convolution") {
  auto rng = make_rng(1, "conv");
  ConvParam p("c", 2, 3, 3, 1, 1);
  p.init(rng);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  for (int i = 0; i < p.b.value.rows(); ++i) p.b.value(i, 0) = d(rng);
  Tensor3 x(2, 5, 6);
  randomize(x, rng);
  ConvCtx ctx;
  Tensor3 y = conv_forward(p, x, &ctx);
  REQUIRE(y.c == 3);
  REQUIRE(y.h == 5);
  REQUIRE(y.w == 6);
  for (int oc = 0; oc < 3; ++oc)
    for (int oy = 0; oy < 5; ++oy)
      for (int ox = 0; ox < 6; ++ox) {
        double acc = p.b.value(oc, 0);
        for (int ic = 0; ic < 2; ++ic)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              int iy = oy + ky - 1, ix = ox + kx - 1;
              if (iy < 0 || ix < 0 || iy >= 5 || ix >= 6) continue;
              acc += p.w.value(oc, (ic * 3 + ky) * 3 + kx) * x.at(ic, iy, ix);
            }
        CHECK(y.at(oc, oy, ox) == doctest::Approx(acc).epsilon(1e-10));
      }
}

TEST_CASE("conv gradients match central finite differences") {
  auto rng = make_rng(2, "convgrad");
  ConvParam p("c", 2, 2, 3, 1, 1);
  p.init(rng);
  Tensor3 x(2, 4, 4), wy(2, 4, 4);
  randomize(x, rng);
  randomize(wy, rng);

  ConvCtx ctx;
  Tensor3 y = conv_forward(p, x, &ctx);
  p.w.zero_grad();
  p.b.zero_grad();
  Tensor3 gx = conv_backward(p, ctx, wy);

  // input gradient
  for (size_t i = 0; i < x.data.size(); i += 3) {
    double orig = x.data[i];
    x.data[i] = orig + kEps;
    double up = weighted_sum(conv_forward(p, x, &ctx), wy);
    x.data[i] = orig - kEps;
    double dn = weighted_sum(conv_forward(p, x, &ctx), wy);
    x.data[i] = orig;
    check_close(gx.data[i], (up - dn) / (2 * kEps));
  }
  // weight + bias gradients
  for (int r = 0; r < p.w.value.rows(); ++r)
    for (int c = 0; c < p.w.value.cols(); c += 4) {
      double orig = p.w.value(r, c);
      p.w.value(r, c) = orig + kEps;
      double up = weighted_sum(conv_forward(p, x, &ctx), wy);
      p.w.value(r, c) = orig - kEps;
      double dn = weighted_sum(conv_forward(p, x, &ctx), wy);
      p.w.value(r, c) = orig;
      check_close(p.w.grad(r, c), (up - dn) / (2 * kEps));
    }
  for (int r = 0; r < p.b.value.rows(); ++r) {
    double orig = p.b.value(r, 0);
    p.b.value(r, 0) = orig + kEps;
    double up = weighted_sum(conv_forward(p, x, &ctx), wy);
    p.b.value(r, 0) = orig - kEps;
    double dn = weighted_sum(conv_forward(p, x, &ctx), wy);
    p.b.value(r, 0) = orig;
    check_close(p.b.grad(r, 0), (up - dn) / (2 * kEps));
  }
}

TEST_CASE("maxpool2 routes gradients to the argmax only") {
  auto rng = make_rng(3, "pool");
  Tensor3 x(2, 6, 6), wy(2, 3, 3);
  randomize(x, rng);
  randomize(wy, rng);
  PoolCtx ctx;
  Tensor3 y = maxpool2_forward(x, &ctx);
  REQUIRE(y.h == 3);
  Tensor3 gx = maxpool2_backward(ctx, wy);
  for (size_t i = 0; i < x.data.size(); ++i) {
    double orig = x.data[i];
    x.data[i] = orig + kEps;
    double up = weighted_sum(maxpool2_forward(x, &ctx), wy);
    x.data[i] = orig - kEps;
    double dn = weighted_sum(maxpool2_forward(x, &ctx), wy);
    x.data[i] = orig;
    check_close(gx.data[i], (up - dn) / (2 * kEps));
  }
}

TEST_CASE("adaptive average pool gradient matches finite differences") {
  auto rng = make_rng(4, "avg");
  Tensor3 x(2, 7, 5), wy(2, 3, 3);
  randomize(x, rng);
  randomize(wy, rng);
  AvgPoolCtx ctx;
  Tensor3 y = adaptive_avgpool_forward(x, 3, &ctx);
  REQUIRE(y.h == 3);
  REQUIRE(y.w == 3);
  Tensor3 gx = adaptive_avgpool_backward(ctx, wy);
  for (size_t i = 0; i < x.data.size(); ++i) {
    double orig = x.data[i];
    x.data[i] = orig + kEps;
    double up = weighted_sum(adaptive_avgpool_forward(x, 3, &ctx), wy);
    x.data[i] = orig - kEps;
    double dn = weighted_sum(adaptive_avgpool_forward(x, 3, &ctx), wy);
    x.data[i] = orig;
    check_close(gx.data[i], (up - dn) / (2 * kEps));
  }
}

TEST_CASE("linear layer gradients match finite differences") {
  auto rng = make_rng(5, "lin");
  LinearParam p("l", 6, 4);
  p.init(rng);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  Mat x(6, 3), wy(4, 3);
  for (int i = 0; i < x.size(); ++i) x.data()[i] = d(rng);
  for (int i = 0; i < wy.size(); ++i) wy.data()[i] = d(rng);

  LinearCtx ctx;
  Mat y = linear_forward(p, x, &ctx);
  p.w.zero_grad();
  p.b.zero_grad();
  Mat gx = linear_backward(p, ctx, wy);

  auto loss = [&]() { return (linear_forward(p, x, &ctx).array() * wy.array()).sum(); };
  for (int i = 0; i < x.size(); ++i) {
    double orig = x.data()[i];
    x.data()[i] = orig + kEps;
    double up = loss();
    x.data()[i] = orig - kEps;
    double dn = loss();
    x.data()[i] = orig;
    check_close(gx.data()[i], (up - dn) / (2 * kEps));
  }
  for (int i = 0; i < p.w.value.size(); ++i) {
    double orig = p.w.value.data()[i];
    p.w.value.data()[i] = orig + kEps;
    double up = loss();
    p.w.value.data()[i] = orig - kEps;
    double dn = loss();
    p.w.value.data()[i] = orig;
    check_close(p.w.grad.data()[i], (up - dn) / (2 * kEps));
  }
}

TEST_CASE("softmax cross entropy: values and gradient") {
  Vec logits(3);
  logits << 10.0, -10.0, -10.0;
  Vec g;
  double loss = softmax_cross_entropy(logits, 0, &g);
  CHECK(loss == doctest::Approx(0.0).epsilon(1e-6));  // near-one-hot

  Vec p = softmax(logits);
  CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-9));

  auto rng = make_rng(6, "ce");
  std::uniform_real_distribution<double> d(-2.0, 2.0);
  for (int t = 0; t < 50; ++t) {
    Vec z(5);
    for (int i = 0; i < 5; ++i) z(i) = d(rng);
    int label = t % 5;
    Vec grad;
    softmax_cross_entropy(z, label, &grad);
    for (int i = 0; i < 5; ++i) {
      Vec zp = z, zm = z;
      zp(i) += kEps;
      zm(i) -= kEps;
      double up = softmax_cross_entropy(zp, label, nullptr);
      double dn = softmax_cross_entropy(zm, label, nullptr);
      check_close(grad(i), (up - dn) / (2 * kEps));
    }
  }
}

TEST_CASE("smooth-L1 values at the documented points") {
  CHECK(smooth_l1(0.0) == 0.0);
  CHECK(smooth_l1(1.0) == 0.5);   // residual magnitude 1 -> 0.5
  CHECK(smooth_l1(-1.0) == 0.5);
  CHECK(smooth_l1(0.5) == doctest::Approx(0.125));
  CHECK(smooth_l1(3.0) == doctest::Approx(2.5));  // |x| - 0.5 outside beta
  CHECK(smooth_l1_grad(0.25) == doctest::Approx(0.25));
  CHECK(smooth_l1_grad(2.0) == 1.0);
  CHECK(smooth_l1_grad(-2.0) == -1.0);
}

TEST_CASE("bce_with_logit is stable and correct") {
  double g;
  CHECK(bce_with_logit(0.0, 1.0, &g) == doctest::Approx(std::log(2.0)));
  CHECK(g == doctest::Approx(-0.5));
  CHECK(bce_with_logit(100.0, 1.0, &g) == doctest::Approx(0.0));
  CHECK(std::isfinite(bce_with_logit(-100.0, 1.0, &g)));
  for (double z : {-3.0, -0.7, 0.0, 1.2, 4.0})
    for (double t : {0.0, 1.0}) {
      bce_with_logit(z, t, &g);
      double gp, up = bce_with_logit(z + kEps, t, &gp);
      double dn = bce_with_logit(z - kEps, t, &gp);
      check_close(g, (up - dn) / (2 * kEps));
    }
}

TEST_CASE("sgd with momentum follows the classic update") {
  Param p("p", 1, 1);
  p.value(0, 0) = 1.0;
  SgdOptimizer opt(0.1, 0.9);
  p.grad(0, 0) = 1.0;
  opt.step({&p});
  CHECK(p.value(0, 0) == doctest::Approx(0.9));  // v = g, x -= lr*v
  p.grad(0, 0) = 1.0;
  opt.step({&p});
  CHECK(p.value(0, 0) == doctest::Approx(0.9 - 0.1 * 1.9));
}

TEST_CASE("clip_grad_norm scales gradients above the threshold") {
  Param p("p", 1, 2);
  p.grad(0, 0) = 3.0;
  p.grad(0, 1) = 4.0;  // norm 5
  double pre = SgdOptimizer::clip_grad_norm({&p}, 1.0);
  CHECK(pre == doctest::Approx(5.0));
  CHECK(std::hypot(p.grad(0, 0), p.grad(0, 1)) == doctest::Approx(1.0));

  Param q("q", 1, 2);
  q.grad(0, 0) = 0.3;
  q.grad(0, 1) = 0.4;
  SgdOptimizer::clip_grad_norm({&q}, 1.0);
  CHECK(q.grad(0, 0) == doctest::Approx(0.3));  // untouched below the cap
}
