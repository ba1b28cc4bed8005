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

#include <stdexcept>
#include <string>

#include "fsdet/image.hpp"

namespace fsdet {

struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Axis-aligned box in image coordinates, (x1, y1) top-left, (x2, y2)
// bottom-right, zero-based, exclusive on the right/bottom edge.
struct BBox {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  bool valid() const { return x1 < x2 && y1 < y2; }
};

struct ImageDims {
  int width = 0, height = 0;
  bool valid() const { return width > 0 && height > 0; }
};

// Square-padded crop region around a source box, clamped to the image.
struct CropWindow {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  BBox source;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
};

// Pad the short edge of `bbox` to match the long edge (centered), round
// the window outward to the integer grid, then clamp to the image.
// The long-axis coordinates are never modified.
CropWindow square_pad_bbox(const BBox& bbox, const ImageDims& dims);

struct SupportImage {
  Image pixels;       // S x S
  int class_id = -1;
  long annotation_id = -1;
};

// Resample the crop window contents to target_size x target_size. When
// clamping made the window non-square the content is stretched
// anisotropically.
SupportImage extract_support_crop(const Image& image, const CropWindow& window,
                                  int target_size,
                                  Interp interp = Interp::kBilinear);

}  // namespace fsdet
