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

#include "fsdet/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>

namespace fsdet {

namespace {

inline double sample_bilinear(const Image& src, int ch, double x, double y) {
  // pixel-center convention: value of pixel i lives at coordinate i + 0.5
  double xa = x - 0.5, ya = y - 0.5;
  xa = std::clamp(xa, 0.0, static_cast<double>(src.w - 1));
  ya = std::clamp(ya, 0.0, static_cast<double>(src.h - 1));
  int x0 = static_cast<int>(std::floor(xa));
  int y0 = static_cast<int>(std::floor(ya));
  int x1 = std::min(x0 + 1, src.w - 1);
  int y1 = std::min(y0 + 1, src.h - 1);
  double fx = xa - x0, fy = ya - y0;
  double v00 = src.at(ch, y0, x0), v01 = src.at(ch, y0, x1);
  double v10 = src.at(ch, y1, x0), v11 = src.at(ch, y1, x1);
  return (1 - fy) * ((1 - fx) * v00 + fx * v01) +
         fy * ((1 - fx) * v10 + fx * v11);
}

inline double sample_nearest(const Image& src, int ch, double x, double y) {
  int xi = std::clamp(static_cast<int>(std::floor(x)), 0, src.w - 1);
  int yi = std::clamp(static_cast<int>(std::floor(y)), 0, src.h - 1);
  return src.at(ch, yi, xi);
}

}  // namespace

Image resample_window(const Image& src, double x0, double y0, double x1,
                      double y1, int out_w, int out_h, Interp interp) {
  if (out_w <= 0 || out_h <= 0) throw std::invalid_argument("bad output size");
  if (x1 <= x0 || y1 <= y0) throw std::invalid_argument("empty window");
  if (x0 < 0 || y0 < 0 || x1 > src.w || y1 > src.h)
    throw std::out_of_range("window outside image");
  Image out(src.c, out_h, out_w);
  double sx = (x1 - x0) / out_w;
  double sy = (y1 - y0) / out_h;
  for (int ch = 0; ch < src.c; ++ch) {
    for (int oy = 0; oy < out_h; ++oy) {
      double y = y0 + (oy + 0.5) * sy;
      for (int ox = 0; ox < out_w; ++ox) {
        double x = x0 + (ox + 0.5) * sx;
        out.at(ch, oy, ox) = interp == Interp::kBilinear
                                 ? sample_bilinear(src, ch, x, y)
                                 : sample_nearest(src, ch, x, y);
      }
    }
  }
  return out;
}

Image resize(const Image& src, int out_w, int out_h, Interp interp) {
  return resample_window(src, 0, 0, src.w, src.h, out_w, out_h, interp);
}

void write_ppm(const Image& img, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  f << "P6\n" << img.w << " " << img.h << "\n255\n";
  std::vector<std::uint8_t> row(static_cast<size_t>(img.w) * 3);
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) {
      for (int ch = 0; ch < 3; ++ch) {
        int src_ch = img.c == 1 ? 0 : std::min(ch, img.c - 1);
        double v = std::clamp(img.at(src_ch, y, x), 0.0, 1.0);
        row[x * 3 + ch] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
    }
    f.write(reinterpret_cast<const char*>(row.data()), row.size());
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

Image read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::string magic;
  f >> magic;
  if (magic != "P6") throw std::runtime_error("not a P6 ppm: " + path);
  auto next_int = [&f, &path]() {
    // skip whitespace and '#' comments
    int c = f.peek();
    while (c == '#' || std::isspace(c)) {
      if (c == '#') f.ignore(1 << 20, '\n');
      else f.get();
      c = f.peek();
    }
    int v;
    if (!(f >> v)) throw std::runtime_error("truncated ppm header: " + path);
    return v;
  };
  int w = next_int(), h = next_int(), maxval = next_int();
  if (maxval != 255) throw std::runtime_error("unsupported maxval: " + path);
  f.get();  // single whitespace after maxval
  std::vector<std::uint8_t> buf(static_cast<size_t>(w) * h * 3);
  f.read(reinterpret_cast<char*>(buf.data()), buf.size());
  if (static_cast<size_t>(f.gcount()) != buf.size())
    throw std::runtime_error("truncated ppm data: " + path);
  Image img(3, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < 3; ++ch)
        img.at(ch, y, x) = buf[(static_cast<size_t>(y) * w + x) * 3 + ch] / 255.0;
  return img;
}

}  // namespace fsdet
