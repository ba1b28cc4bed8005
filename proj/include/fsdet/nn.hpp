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

#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "fsdet/tensor.hpp"

namespace fsdet {

// One learnable tensor with its gradient accumulator. Layers never own
// scratch state; per-call caches live in the *Ctx structs so shared
// parameters can serve several forward passes per step.
struct Param {
  std::string name;
  Mat value;
  Mat grad;

  Param() = default;
  Param(std::string n, int rows, int cols)
      : name(std::move(n)), value(Mat::Zero(rows, cols)),
        grad(Mat::Zero(rows, cols)) {}
  void zero_grad() { grad.setZero(); }
};

void init_uniform(Param& p, double bound, std::mt19937_64& rng);
// fan-in scaled uniform init
void init_fan_in(Param& p, int fan_in, std::mt19937_64& rng);

// ---- convolution (im2col) ----

struct ConvParam {
  int in_c = 0, out_c = 0, k = 3, stride = 1, pad = 1;
  Param w;  // out_c x (in_c * k * k)
  Param b;  // out_c x 1

  ConvParam() = default;
  ConvParam(const std::string& name, int in_c_, int out_c_, int k_,
            int stride_, int pad_)
      : in_c(in_c_), out_c(out_c_), k(k_), stride(stride_), pad(pad_),
        w(name + ".w", out_c_, in_c_ * k_ * k_), b(name + ".b", out_c_, 1) {}
  void init(std::mt19937_64& rng) { init_fan_in(w, in_c * k * k, rng); }
};

struct ConvCtx {
  Mat cols;
  int in_h = 0, in_w = 0;
};

Tensor3 conv_forward(const ConvParam& p, const Tensor3& x, ConvCtx* ctx);
Tensor3 conv_backward(ConvParam& p, const ConvCtx& ctx, const Tensor3& gy);

// ---- relu ----

struct ReluCtx {
  std::vector<unsigned char> mask;
};

Tensor3 relu_forward(const Tensor3& x, ReluCtx* ctx);
Tensor3 relu_backward(const ReluCtx& ctx, const Tensor3& gy);

struct ReluMatCtx {
  Mat mask;
};

Mat relu_forward(const Mat& x, ReluMatCtx* ctx);
Mat relu_backward(const ReluMatCtx& ctx, const Mat& gy);

// ---- 2x2 max pooling, stride 2 ----

struct PoolCtx {
  std::vector<int> argmax;  // flat input index per output element
  int in_h = 0, in_w = 0, c = 0;
};

Tensor3 maxpool2_forward(const Tensor3& x, PoolCtx* ctx);
Tensor3 maxpool2_backward(const PoolCtx& ctx, const Tensor3& gy);

// ---- adaptive average pooling to a fixed grid ----

struct AvgPoolCtx {
  int in_h = 0, in_w = 0, c = 0, out = 0;
};

Tensor3 adaptive_avgpool_forward(const Tensor3& x, int out_size,
                                 AvgPoolCtx* ctx);
Tensor3 adaptive_avgpool_backward(const AvgPoolCtx& ctx, const Tensor3& gy);

// ---- fully connected ----

struct LinearParam {
  Param w;  // out x in
  Param b;  // out x 1

  LinearParam() = default;
  LinearParam(const std::string& name, int in, int out)
      : w(name + ".w", out, in), b(name + ".b", out, 1) {}
  void init(std::mt19937_64& rng) { init_fan_in(w, static_cast<int>(w.value.cols()), rng); }
  int in_dim() const { return static_cast<int>(w.value.cols()); }
  int out_dim() const { return static_cast<int>(w.value.rows()); }
};

struct LinearCtx {
  Mat x;  // in x batch
};

Mat linear_forward(const LinearParam& p, const Mat& x, LinearCtx* ctx);
Mat linear_backward(LinearParam& p, const LinearCtx& ctx, const Mat& gy);

// ---- pieces of the losses ----

Vec softmax(const Vec& logits);
// returns loss; *glogits gets d(loss)/d(logits)
double softmax_cross_entropy(const Vec& logits, int label, Vec* glogits);
double smooth_l1(double x, double beta = 1.0);
double smooth_l1_grad(double x, double beta = 1.0);
double sigmoid(double x);
// binary cross entropy on a logit; *glogit gets the derivative
double bce_with_logit(double logit, double target, double* glogit);

// ---- flatten helpers ----

Vec flatten(const Tensor3& t);
Tensor3 unflatten(const Vec& v, int c, int h, int w);

// ---- optimizer ----

class SgdOptimizer {
 public:
  SgdOptimizer(double lr, double momentum) : lr_(lr), momentum_(momentum) {}

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  void step(const std::vector<Param*>& params);
  static void zero_grad(const std::vector<Param*>& params);
  // returns the pre-clip norm
  static double clip_grad_norm(const std::vector<Param*>& params,
                               double max_norm);

 private:
  double lr_;
  double momentum_;
  std::unordered_map<Param*, Mat> velocity_;
};

}  // namespace fsdet
