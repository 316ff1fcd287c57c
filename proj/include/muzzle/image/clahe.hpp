// Copyright 2026 The MuzzleID Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "muzzle/image/gray_image.hpp"

namespace muzzle::image {

struct ClaheParams {
  int grid_x = 8;
  int grid_y = 8;
  double clip_factor = 2.0;
};

namespace clahe_detail {

// Tile i spans [ceil(i * n / g), ceil((i + 1) * n / g)). Every tile is
// non-empty whenever n >= g.
inline std::vector<int> tile_starts(int n, int g) {
  std::vector<int> s(static_cast<std::size_t>(g) + 1);
  for (int i = 0; i <= g; ++i) s[i] = static_cast<int>((static_cast<long long>(i) * n + g - 1) / g);
  return s;
}

inline int clip_ceiling(double clip_factor, long long tile_pixels) {
  const double c = std::floor(clip_factor * static_cast<double>(tile_pixels) / 256.0 + 0.5);
  return static_cast<int>(std::max(1.0, c));
}

// Clips bins at the ceiling, spreads the excess uniformly and hands the
// remaining (excess mod 256) counts to the lowest bins, one each.
inline void clip_and_redistribute(std::array<long long, 256>& hist, long long ceiling) {
  long long excess = 0;
  for (auto& h : hist) {
    if (h > ceiling) {
      excess += h - ceiling;
      h = ceiling;
    }
  }
  const long long each = excess / 256, residual = excess % 256;
  for (int b = 0; b < 256; ++b) hist[b] += each + (b < residual ? 1 : 0);
}

// Position of a pixel between neighbouring tile centers, in doubled
// coordinates so that every center is an integer.
struct Span {
  int lo = 0;
  int hi = 0;
  long long num = 0;
  long long den = 1;
};

inline Span locate(int p, const std::vector<int>& starts) {
  const int tiles = static_cast<int>(starts.size()) - 1;
  auto center2 = [&](int i) { return starts[i] + starts[i + 1] - 1; };
  const int p2 = 2 * p;
  if (p2 <= center2(0)) return {0, 0, 0, 1};
  if (p2 >= center2(tiles - 1)) return {tiles - 1, tiles - 1, 0, 1};
  int i = 0;
  while (center2(i + 1) <= p2) ++i;
  return {i, i + 1, p2 - center2(i), center2(i + 1) - center2(i)};
}

}  // namespace clahe_detail

inline GrayImage clahe(const GrayImage& img, const ClaheParams& p = {}) {
  using namespace clahe_detail;
  if (img.empty()) fail(ErrorCode::kEmptyImage, "clahe on an empty image");
  if (p.grid_x < 1 || p.grid_y < 1 || p.grid_x > img.width || p.grid_y > img.height) {
    fail(ErrorCode::kSpecError, "clahe grid " + std::to_string(p.grid_x) + "x" + std::to_string(p.grid_y) +
                                    " does not fit image " + std::to_string(img.width) + "x" +
                                    std::to_string(img.height));
  }
  if (!(p.clip_factor >= 1.0)) fail(ErrorCode::kSpecError, "clahe clip factor must be >= 1");
  const auto xs = tile_starts(img.width, p.grid_x);
  const auto ys = tile_starts(img.height, p.grid_y);

  // Per-tile lookup tables.
  std::vector<std::array<std::uint8_t, 256>> lut(static_cast<std::size_t>(p.grid_x) * p.grid_y);
  for (int ty = 0; ty < p.grid_y; ++ty) {
    for (int tx = 0; tx < p.grid_x; ++tx) {
      std::array<long long, 256> hist{};
      for (int y = ys[ty]; y < ys[ty + 1]; ++y) {
        for (int x = xs[tx]; x < xs[tx + 1]; ++x) ++hist[img.at(x, y)];
      }
      const long long n = static_cast<long long>(xs[tx + 1] - xs[tx]) * (ys[ty + 1] - ys[ty]);
      clip_and_redistribute(hist, clip_ceiling(p.clip_factor, n));
      auto& table = lut[static_cast<std::size_t>(ty) * p.grid_x + tx];
      long long cdf = 0;
      for (int v = 0; v < 256; ++v) {
        cdf += hist[v];
        table[v] = static_cast<std::uint8_t>((2 * 255 * cdf + n) / (2 * n));
      }
    }
  }

  std::vector<Span> col_spans(static_cast<std::size_t>(img.width));
  for (int x = 0; x < img.width; ++x) col_spans[x] = locate(x, xs);
  GrayImage out(img.width, img.height);
  for (int y = 0; y < img.height; ++y) {
    const Span sy = locate(y, ys);
    for (int x = 0; x < img.width; ++x) {
      const Span& sx = col_spans[x];
      const int v = img.at(x, y);
      const long long a = lut[static_cast<std::size_t>(sy.lo) * p.grid_x + sx.lo][v];
      const long long b = lut[static_cast<std::size_t>(sy.lo) * p.grid_x + sx.hi][v];
      const long long c = lut[static_cast<std::size_t>(sy.hi) * p.grid_x + sx.lo][v];
      const long long d = lut[static_cast<std::size_t>(sy.hi) * p.grid_x + sx.hi][v];
      const long long num = (sy.den - sy.num) * ((sx.den - sx.num) * a + sx.num * b) +
                            sy.num * ((sx.den - sx.num) * c + sx.num * d);
      const long long den = sx.den * sy.den;
      out.at(x, y) = static_cast<std::uint8_t>((2 * num + den) / (2 * den));
    }
  }
  return out;
}

}  // namespace muzzle::image
