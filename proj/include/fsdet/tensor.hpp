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

#include <Eigen/Dense>
#include <cassert>
#include <stdexcept>
#include <vector>

namespace fsdet {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Planar C x H x W tensor of doubles. Images and feature maps share it.
struct Tensor3 {
  int c = 0, h = 0, w = 0;
  std::vector<double> data;

  Tensor3() = default;
  Tensor3(int c_, int h_, int w_, double fill = 0.0)
      : c(c_), h(h_), w(w_), data(static_cast<size_t>(c_) * h_ * w_, fill) {}

  double& at(int ci, int y, int x) {
    return data[(static_cast<size_t>(ci) * h + y) * w + x];
  }
  double at(int ci, int y, int x) const {
    return data[(static_cast<size_t>(ci) * h + y) * w + x];
  }
  size_t size() const { return data.size(); }
  bool same_shape(const Tensor3& o) const {
    return c == o.c && h == o.h && w == o.w;
  }
  void fill(double v) { std::fill(data.begin(), data.end(), v); }
};

}  // namespace fsdet
