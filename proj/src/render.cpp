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

#include "fsdet/render.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace fsdet {

namespace {

// 3x5 glyphs, rows top to bottom, '1' = lit
const char* glyph(char c) {
  switch (std::tolower(static_cast<unsigned char>(c))) {
    case '0': return "111101101101111";
    case '1': return "010110010010111";
    case '2': return "111001111100111";
    case '3': return "111001111001111";
    case '4': return "101101111001001";
    case '5': return "111100111001111";
    case '6': return "111100111101111";
    case '7': return "111001001010010";
    case '8': return "111101111101111";
    case '9': return "111101111001111";
    case 'a': return "010101111101101";
    case 'b': return "110101110101110";
    case 'c': return "011100100100011";
    case 'd': return "110101101101110";
    case 'e': return "111100110100111";
    case 'f': return "111100110100100";
    case 'g': return "011100101101011";
    case 'h': return "101101111101101";
    case 'i': return "111010010010111";
    case 'j': return "001001001101010";
    case 'k': return "101110100110101";
    case 'l': return "100100100100111";
    case 'm': return "101111101101101";
    case 'n': return "111101101101101";
    case 'o': return "010101101101010";
    case 'p': return "110101110100100";
    case 'q': return "111101101111001";
    case 'r': return "110101110110101";
    case 's': return "011100010001110";
    case 't': return "111010010010010";
    case 'u': return "101101101101111";
    case 'v': return "101101101101010";
    case 'w': return "101101111111101";
    case 'x': return "101101010101101";
    case 'y': return "101101010010010";
    case 'z': return "111001010100111";
    case '.': return "000000000000010";
    case ',': return "000000000010100";
    case '-': return "000000111000000";
    case '_': return "000000000000111";
    case ':': return "000010000010000";
    case '=': return "000111000111000";
    case '/': return "001001010100100";
    default:  return "000000000000000";
  }
}

void set_px(Image& img, int x, int y, const Rgb& color) {
  if (x < 0 || y < 0 || x >= img.w || y >= img.h) return;
  img.at(0, y, x) = color.r;
  img.at(1, y, x) = color.g;
  img.at(2, y, x) = color.b;
}

std::string format_score(double s) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%.2f", s);
  return buf;
}

const Rgb kPalette[] = {
    {0.95, 0.25, 0.20}, {0.20, 0.65, 0.95}, {0.25, 0.80, 0.35},
    {0.95, 0.75, 0.15}, {0.75, 0.35, 0.90}, {0.95, 0.45, 0.70},
};
constexpr int kPaletteSize = 6;

}  // namespace

void draw_text(Image& img, int x, int y, const std::string& text,
               const Rgb& color, int scale) {
  int cx = x;
  for (char c : text) {
    if (c == ' ') {
      cx += 4 * scale;
      continue;
    }
    const char* g = glyph(c);
    for (int ry = 0; ry < 5; ++ry)
      for (int rx = 0; rx < 3; ++rx) {
        if (g[ry * 3 + rx] != '1') continue;
        for (int sy = 0; sy < scale; ++sy)
          for (int sx = 0; sx < scale; ++sx)
            set_px(img, cx + rx * scale + sx, y + ry * scale + sy, color);
      }
    cx += 4 * scale;
  }
}

void draw_box_outline(Image& img, const BBox& box, const Rgb& color,
                      int thickness) {
  int x0 = static_cast<int>(std::lround(box.x1));
  int y0 = static_cast<int>(std::lround(box.y1));
  int x1 = static_cast<int>(std::lround(box.x2)) - 1;
  int y1 = static_cast<int>(std::lround(box.y2)) - 1;
  for (int t = 0; t < thickness; ++t) {
    for (int x = x0; x <= x1; ++x) {
      set_px(img, x, y0 + t, color);
      set_px(img, x, y1 - t, color);
    }
    for (int y = y0; y <= y1; ++y) {
      set_px(img, x0 + t, y, color);
      set_px(img, x1 - t, y, color);
    }
  }
}

void fill_rect(Image& img, int x0, int y0, int x1, int y1, const Rgb& color) {
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) set_px(img, x, y, color);
}

Image render_overlay(const Image& image,
                     const std::vector<DetectionResult>& dets,
                     const std::vector<std::string>& class_names) {
  Image out = image;
  for (const auto& d : dets) {
    const Rgb& color = kPalette[((d.class_id % kPaletteSize) + kPaletteSize) %
                                kPaletteSize];
    draw_box_outline(out, d.box, color);
    std::string name = d.class_id >= 0 &&
                               d.class_id < static_cast<int>(class_names.size())
                           ? class_names[d.class_id]
                           : "c" + std::to_string(d.class_id);
    std::string label = name + " " + format_score(d.score);
    int tx = static_cast<int>(std::lround(d.box.x1)) + 2;
    int ty = static_cast<int>(std::lround(d.box.y1)) + 2;
    draw_text(out, tx, ty, label, color);
  }
  return out;
}

std::vector<std::string> render_overlays(
    const DatasetIndex& index,
    const std::map<long, std::vector<DetectionResult>>& detections,
    const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::vector<std::string> written;
  for (const auto& [image_id, dets] : detections) {
    Image img;
    try {
      img = read_ppm(index.image_path(image_id));
    } catch (const std::exception& e) {
      std::cerr << "warning: skipping overlay for image " << image_id << ": "
                << e.what() << '\n';
      continue;
    }
    Image overlay = render_overlay(img, dets, index.classes());
    std::string path =
        (fs::path(out_dir) / ("overlay_" + std::to_string(image_id) + ".ppm"))
            .string();
    write_ppm(overlay, path);
    written.push_back(path);
  }
  return written;
}

std::vector<std::string> render_ap_histograms(const std::vector<GridCell>& cells,
                                              const DatasetIndex& index,
                                              const std::string& out_dir) {
  fs::create_directories(out_dir);

  std::set<int> classes;
  std::vector<std::string> methods;
  std::vector<int> ks;
  for (const auto& cell : cells) {
    if (!cell.ok()) continue;
    for (const auto& [cls, ap] : cell.ap_by_class) classes.insert(cls);
    if (std::find(methods.begin(), methods.end(), cell.method) == methods.end())
      methods.push_back(cell.method);
    if (std::find(ks.begin(), ks.end(), cell.k) == ks.end())
      ks.push_back(cell.k);
  }
  std::sort(ks.begin(), ks.end());

  const int bar_w = 10, bar_gap = 3, group_gap = 14;
  const int plot_h = 120, margin = 22;
  const int group_w =
      static_cast<int>(methods.size()) * (bar_w + bar_gap) + group_gap;
  const int width =
      std::max(120, margin * 2 + static_cast<int>(ks.size()) * group_w);
  const int height = plot_h + margin * 2;

  std::vector<std::string> written;
  for (int cls : classes) {
    Image img(3, height, width);
    img.fill(1.0);
    const Rgb axis{0.15, 0.15, 0.15};
    // axes and 0.0/0.5/1.0 grid lines
    for (double tick : {0.0, 0.5, 1.0}) {
      int y = margin + plot_h - static_cast<int>(std::lround(tick * plot_h));
      for (int x = margin; x < width - margin / 2; ++x)
        set_px(img, x, y, tick == 0.0 ? axis : Rgb{0.8, 0.8, 0.8});
      draw_text(img, 2, y - 2, format_score(tick), axis);
    }

    json bars = json::array();
    for (size_t ki = 0; ki < ks.size(); ++ki) {
      int gx = margin + static_cast<int>(ki) * group_w;
      draw_text(img, gx, margin + plot_h + 4,
                "k=" + std::to_string(ks[ki]), axis);
      for (size_t mi = 0; mi < methods.size(); ++mi) {
        // last matching cell wins; grids hold one cell per (method, k)
        const GridCell* found = nullptr;
        for (const auto& cell : cells)
          if (cell.ok() && cell.method == methods[mi] && cell.k == ks[ki] &&
              cell.ap_by_class.count(cls))
            found = &cell;
        if (!found) continue;
        double ap = found->ap_by_class.at(cls);
        int x0 = gx + static_cast<int>(mi) * (bar_w + bar_gap);
        int bh = static_cast<int>(std::lround(ap * plot_h));
        const Rgb& color = kPalette[mi % kPaletteSize];
        fill_rect(img, x0, margin + plot_h - bh, x0 + bar_w - 1,
                  margin + plot_h - 1, color);
        bars.push_back({{"method", methods[mi]},
                        {"k", ks[ki]},
                        {"rho", found->rho},
                        {"ap", ap}});
      }
    }
    draw_text(img, margin, 4, index.classes()[cls], axis, 2);

    std::string stem =
        (fs::path(out_dir) / ("hist_" + index.classes()[cls])).string();
    write_ppm(img, stem + ".ppm");
    json sidecar;
    sidecar["class"] = index.classes()[cls];
    sidecar["bars"] = bars;
    std::ofstream side(stem + ".json", std::ios::binary);
    side << sidecar.dump(2) << '\n';
    written.push_back(stem + ".ppm");
  }
  return written;
}

}  // namespace fsdet
