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

#include "fsdet/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace fsdet {

CropWindow square_pad_bbox(const BBox& bbox, const ImageDims& dims) {
  if (!bbox.valid())
    throw ValidationError("square_pad_bbox: degenerate bbox");
  if (!dims.valid()) throw ValidationError("square_pad_bbox: bad image dims");
  if (bbox.x1 < 0 || bbox.y1 < 0 || bbox.x2 > dims.width ||
      bbox.y2 > dims.height)
    throw ValidationError("square_pad_bbox: bbox outside image");

  double w = bbox.width();
  double h = bbox.height();
  CropWindow win;
  win.source = bbox;
  win.x1 = bbox.x1;
  win.y1 = bbox.y1;
  win.x2 = bbox.x2;
  win.y2 = bbox.y2;
  // Half-pixel pads from an odd length difference go floor to the min
  // edge and ceil to the max edge, so the padded extent matches the
  // long edge exactly on integer grids.
  if (w >= h) {
    double pad = (w - h) / 2.0;
    win.y1 = std::max(std::floor(bbox.y1 - std::floor(pad)), 0.0);
    win.y2 = std::min(std::ceil(bbox.y2 + std::ceil(pad)),
                      static_cast<double>(dims.height));
  } else {
    double pad = (h - w) / 2.0;
    win.x1 = std::max(std::floor(bbox.x1 - std::floor(pad)), 0.0);
    win.x2 = std::min(std::ceil(bbox.x2 + std::ceil(pad)),
                      static_cast<double>(dims.width));
  }
  return win;
}

SupportImage extract_support_crop(const Image& image, const CropWindow& window,
                                  int target_size, Interp interp) {
  if (target_size <= 0)
    throw ValidationError("extract_support_crop: bad target size");
  if (window.x1 < 0 || window.y1 < 0 || window.x2 > image.w ||
      window.y2 > image.h)
    throw ValidationError("extract_support_crop: window outside image");
  SupportImage s;
  s.pixels = resample_window(image, window.x1, window.y1, window.x2, window.y2,
                             target_size, target_size, interp);
  return s;
}

}  // namespace fsdet
