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

#include "fsdet/evaluation.hpp"

namespace fsdet {

struct Rgb {
  double r = 0, g = 0, b = 0;
};

// 3x5 bitmap microfont; unknown characters render as blanks.
void draw_text(Image& img, int x, int y, const std::string& text,
               const Rgb& color, int scale = 1);
void draw_box_outline(Image& img, const BBox& box, const Rgb& color,
                      int thickness = 1);
void fill_rect(Image& img, int x0, int y0, int x1, int y1, const Rgb& color);

// One detection overlay: boxes, class labels and scores drawn onto a
// copy of the input. An empty detection list returns the input as-is.
Image render_overlay(const Image& image,
                     const std::vector<DetectionResult>& dets,
                     const std::vector<std::string>& class_names);

// Writes overlay_<image_id>.ppm per entry. Unreadable source images are
// skipped with a warning on stderr; returns the paths written.
std::vector<std::string> render_overlays(
    const DatasetIndex& index,
    const std::map<long, std::vector<DetectionResult>>& detections,
    const std::string& out_dir);

// Grouped-bar AP histogram per novel class: one group per shot count,
// one bar per method inside a group. Writes hist_<class>.ppm plus a
// hist_<class>.json sidecar carrying the exact bar values. Returns the
// image paths written.
std::vector<std::string> render_ap_histograms(const std::vector<GridCell>& cells,
                                              const DatasetIndex& index,
                                              const std::string& out_dir);

}  // namespace fsdet
