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

#include "fsdet/nn.hpp"

#include <cmath>

namespace fsdet {

void init_uniform(Param& p, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (int j = 0; j < p.value.cols(); ++j)
    for (int i = 0; i < p.value.rows(); ++i) p.value(i, j) = dist(rng);
}

void init_fan_in(Param& p, int fan_in, std::mt19937_64& rng) {
  // Kaiming-uniform: variance 2/fan_in keeps activation variance stable
  // through ReLU stacks, so deep features retain spatial contrast.
  init_uniform(p, std::sqrt(6.0 / static_cast<double>(fan_in)), rng);
}

// ---- convolution ----

static int conv_out(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

Tensor3 conv_forward(const ConvParam& p, const Tensor3& x, ConvCtx* ctx) {
  if (x.c != p.in_c) throw std::invalid_argument("conv: channel mismatch");
  int oh = conv_out(x.h, p.k, p.stride, p.pad);
  int ow = conv_out(x.w, p.k, p.stride, p.pad);
  if (oh <= 0 || ow <= 0) throw std::invalid_argument("conv: input too small");
  Mat cols = Mat::Zero(p.in_c * p.k * p.k, oh * ow);
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      int col = oy * ow + ox;
      int y0 = oy * p.stride - p.pad;
      int x0 = ox * p.stride - p.pad;
      int row = 0;
      for (int ci = 0; ci < p.in_c; ++ci)
        for (int ky = 0; ky < p.k; ++ky)
          for (int kx = 0; kx < p.k; ++kx, ++row) {
            int iy = y0 + ky, ix = x0 + kx;
            if (iy >= 0 && iy < x.h && ix >= 0 && ix < x.w)
              cols(row, col) = x.at(ci, iy, ix);
          }
    }
  }
  Mat out_mat = p.w.value * cols;
  out_mat.colwise() += p.b.value.col(0);
  Tensor3 out(p.out_c, oh, ow);
  for (int co = 0; co < p.out_c; ++co)
    for (int i = 0; i < oh * ow; ++i) out.data[static_cast<size_t>(co) * oh * ow + i] = out_mat(co, i);
  if (ctx) {
    ctx->cols = std::move(cols);
    ctx->in_h = x.h;
    ctx->in_w = x.w;
  }
  return out;
}

Tensor3 conv_backward(ConvParam& p, const ConvCtx& ctx, const Tensor3& gy) {
  int oh = gy.h, ow = gy.w;
  Mat gy_mat(p.out_c, oh * ow);
  for (int co = 0; co < p.out_c; ++co)
    for (int i = 0; i < oh * ow; ++i) gy_mat(co, i) = gy.data[static_cast<size_t>(co) * oh * ow + i];
  p.w.grad.noalias() += gy_mat * ctx.cols.transpose();
  p.b.grad.col(0) += gy_mat.rowwise().sum();
  Mat gcols = p.w.value.transpose() * gy_mat;

  Tensor3 gx(p.in_c, ctx.in_h, ctx.in_w);
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      int col = oy * ow + ox;
      int y0 = oy * p.stride - p.pad;
      int x0 = ox * p.stride - p.pad;
      int row = 0;
      for (int ci = 0; ci < p.in_c; ++ci)
        for (int ky = 0; ky < p.k; ++ky)
          for (int kx = 0; kx < p.k; ++kx, ++row) {
            int iy = y0 + ky, ix = x0 + kx;
            if (iy >= 0 && iy < ctx.in_h && ix >= 0 && ix < ctx.in_w)
              gx.at(ci, iy, ix) += gcols(row, col);
          }
    }
  }
  return gx;
}

// ---- relu ----

Tensor3 relu_forward(const Tensor3& x, ReluCtx* ctx) {
  Tensor3 out = x;
  if (ctx) ctx->mask.assign(x.size(), 0);
  for (size_t i = 0; i < out.data.size(); ++i) {
    if (out.data[i] > 0) {
      if (ctx) ctx->mask[i] = 1;
    } else {
      out.data[i] = 0;
    }
  }
  return out;
}

Tensor3 relu_backward(const ReluCtx& ctx, const Tensor3& gy) {
  Tensor3 gx = gy;
  for (size_t i = 0; i < gx.data.size(); ++i)
    if (!ctx.mask[i]) gx.data[i] = 0;
  return gx;
}

Mat relu_forward(const Mat& x, ReluMatCtx* ctx) {
  Mat out = x.cwiseMax(0.0);
  if (ctx) ctx->mask = (x.array() > 0.0).cast<double>();
  return out;
}

Mat relu_backward(const ReluMatCtx& ctx, const Mat& gy) {
  return gy.cwiseProduct(ctx.mask);
}

// ---- 2x2 max pooling ----

Tensor3 maxpool2_forward(const Tensor3& x, PoolCtx* ctx) {
  int oh = x.h / 2, ow = x.w / 2;
  if (oh == 0 || ow == 0) throw std::invalid_argument("maxpool: input too small");
  Tensor3 out(x.c, oh, ow);
  if (ctx) {
    ctx->argmax.assign(static_cast<size_t>(x.c) * oh * ow, 0);
    ctx->in_h = x.h;
    ctx->in_w = x.w;
    ctx->c = x.c;
  }
  for (int ci = 0; ci < x.c; ++ci)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        double best = -1e300;
        int best_idx = 0;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            int iy = oy * 2 + dy, ix = ox * 2 + dx;
            double v = x.at(ci, iy, ix);
            if (v > best) {
              best = v;
              best_idx = (ci * x.h + iy) * x.w + ix;
            }
          }
        out.at(ci, oy, ox) = best;
        if (ctx) ctx->argmax[(static_cast<size_t>(ci) * oh + oy) * ow + ox] = best_idx;
      }
  return out;
}

Tensor3 maxpool2_backward(const PoolCtx& ctx, const Tensor3& gy) {
  Tensor3 gx(ctx.c, ctx.in_h, ctx.in_w);
  for (size_t i = 0; i < gy.data.size(); ++i)
    gx.data[ctx.argmax[i]] += gy.data[i];
  return gx;
}

// ---- adaptive average pooling ----

Tensor3 adaptive_avgpool_forward(const Tensor3& x, int out_size,
                                 AvgPoolCtx* ctx) {
  Tensor3 out(x.c, out_size, out_size);
  for (int ci = 0; ci < x.c; ++ci)
    for (int oy = 0; oy < out_size; ++oy) {
      int y0 = oy * x.h / out_size;
      int y1 = std::max(y0 + 1, (oy + 1) * x.h / out_size);
      y1 = std::min(y1, x.h);
      for (int ox = 0; ox < out_size; ++ox) {
        int x0 = ox * x.w / out_size;
        int x1 = std::max(x0 + 1, (ox + 1) * x.w / out_size);
        x1 = std::min(x1, x.w);
        double sum = 0;
        for (int iy = y0; iy < y1; ++iy)
          for (int ix = x0; ix < x1; ++ix) sum += x.at(ci, iy, ix);
        out.at(ci, oy, ox) = sum / ((y1 - y0) * (x1 - x0));
      }
    }
  if (ctx) {
    ctx->in_h = x.h;
    ctx->in_w = x.w;
    ctx->c = x.c;
    ctx->out = out_size;
  }
  return out;
}

Tensor3 adaptive_avgpool_backward(const AvgPoolCtx& ctx, const Tensor3& gy) {
  Tensor3 gx(ctx.c, ctx.in_h, ctx.in_w);
  int out_size = ctx.out;
  for (int ci = 0; ci < ctx.c; ++ci)
    for (int oy = 0; oy < out_size; ++oy) {
      int y0 = oy * ctx.in_h / out_size;
      int y1 = std::max(y0 + 1, (oy + 1) * ctx.in_h / out_size);
      y1 = std::min(y1, ctx.in_h);
      for (int ox = 0; ox < out_size; ++ox) {
        int x0 = ox * ctx.in_w / out_size;
        int x1 = std::max(x0 + 1, (ox + 1) * ctx.in_w / out_size);
        x1 = std::min(x1, ctx.in_w);
        double g = gy.at(ci, oy, ox) / ((y1 - y0) * (x1 - x0));
        for (int iy = y0; iy < y1; ++iy)
          for (int ix = x0; ix < x1; ++ix) gx.at(ci, iy, ix) += g;
      }
    }
  return gx;
}

// ---- fully connected ----

Mat linear_forward(const LinearParam& p, const Mat& x, LinearCtx* ctx) {
  if (x.rows() != p.w.value.cols())
    throw std::invalid_argument("linear: dimension mismatch");
  if (ctx) ctx->x = x;
  Mat out = p.w.value * x;
  out.colwise() += p.b.value.col(0);
  return out;
}

Mat linear_backward(LinearParam& p, const LinearCtx& ctx, const Mat& gy) {
  p.w.grad.noalias() += gy * ctx.x.transpose();
  p.b.grad.col(0) += gy.rowwise().sum();
  return p.w.value.transpose() * gy;
}

// ---- losses ----

Vec softmax(const Vec& logits) {
  Vec z = logits.array() - logits.maxCoeff();
  Vec e = z.array().exp();
  return e / e.sum();
}

double softmax_cross_entropy(const Vec& logits, int label, Vec* glogits) {
  Vec probs = softmax(logits);
  double p = std::max(probs(label), 1e-300);
  if (glogits) {
    *glogits = probs;
    (*glogits)(label) -= 1.0;
  }
  return -std::log(p);
}

double smooth_l1(double x, double beta) {
  double a = std::abs(x);
  return a < beta ? 0.5 * x * x / beta : a - 0.5 * beta;
}

double smooth_l1_grad(double x, double beta) {
  double a = std::abs(x);
  return a < beta ? x / beta : (x > 0 ? 1.0 : -1.0);
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double bce_with_logit(double logit, double target, double* glogit) {
  double p = sigmoid(logit);
  if (glogit) *glogit = p - target;
  // numerically stable form
  double loss = std::max(logit, 0.0) - logit * target +
                std::log1p(std::exp(-std::abs(logit)));
  return loss;
}

// ---- flatten ----

Vec flatten(const Tensor3& t) {
  Vec v(t.size());
  for (size_t i = 0; i < t.data.size(); ++i) v(static_cast<Eigen::Index>(i)) = t.data[i];
  return v;
}

Tensor3 unflatten(const Vec& v, int c, int h, int w) {
  Tensor3 t(c, h, w);
  if (static_cast<size_t>(v.size()) != t.size())
    throw std::invalid_argument("unflatten: size mismatch");
  for (size_t i = 0; i < t.data.size(); ++i) t.data[i] = v(static_cast<Eigen::Index>(i));
  return t;
}

// ---- optimizer ----

void SgdOptimizer::step(const std::vector<Param*>& params) {
  for (Param* p : params) {
    Mat& v = velocity_[p];
    if (v.size() == 0) v = Mat::Zero(p->value.rows(), p->value.cols());
    v = momentum_ * v - lr_ * p->grad;
    p->value += v;
  }
}

void SgdOptimizer::zero_grad(const std::vector<Param*>& params) {
  for (Param* p : params) p->zero_grad();
}

double SgdOptimizer::clip_grad_norm(const std::vector<Param*>& params,
                                    double max_norm) {
  double sq = 0;
  for (Param* p : params) sq += p->grad.squaredNorm();
  double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0) {
    double scale = max_norm / norm;
    for (Param* p : params) p->grad *= scale;
  }
  return norm;
}

}  // namespace fsdet
