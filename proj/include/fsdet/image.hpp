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

#include <string>

#include "fsdet/tensor.hpp"

namespace fsdet {

// Images are Tensor3 with c channels (3 for RGB), values in [0, 1].
using Image = Tensor3;

enum class Interp { kBilinear, kNearest };

// Resample the rectangular window [x0,x1)x[y0,y1) of src to out_w x out_h.
// Window coordinates are pixel units; pixel centers sit at integer + 0.5.
Image resample_window(const Image& src, double x0, double y0, double x1,
                      double y1, int out_w, int out_h,
                      Interp interp = Interp::kBilinear);

Image resize(const Image& src, int out_w, int out_h,
             Interp interp = Interp::kBilinear);

// Binary PPM (P6) read/write, 8 bits per channel. Grayscale images are
// broadcast to RGB on write.
void write_ppm(const Image& img, const std::string& path);
Image read_ppm(const std::string& path);

}  // namespace fsdet
