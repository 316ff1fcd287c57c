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

#include <algorithm>
#include <cmath>
#include <vector>

#include "muzzle/image/gray_image.hpp"

namespace muzzle::image {

// luma = round(0.299 R + 0.587 G + 0.114 B), evaluated in exact integer
// arithmetic with ties rounded up.
inline GrayImage to_grayscale(const RgbImage& rgb) {
  if (rgb.width <= 0 || rgb.height <= 0) fail(ErrorCode::kEmptyImage, "zero-sized RGB image");
  GrayImage out(rgb.width, rgb.height);
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    const int r = rgb.pixels[3 * i], g = rgb.pixels[3 * i + 1], b = rgb.pixels[3 * i + 2];
    out.pixels[i] = static_cast<std::uint8_t>(std::min(255, (299 * r + 587 * g + 114 * b + 500) / 1000));
  }
  return out;
}

// Bilinear resampling with half-pixel centers and edge clamping.
inline GrayImage resize_bilinear(const GrayImage& img, int w, int h) {
  if (img.empty()) fail(ErrorCode::kEmptyImage, "cannot resize an empty image");
  if (w < 1 || h < 1) fail(ErrorCode::kSpecError, "resize target must be at least 1x1");
  if (w == img.width && h == img.height) return img;
  GrayImage out(w, h);
  const double sx = static_cast<double>(img.width) / w;
  const double sy = static_cast<double>(img.height) / h;
  for (int y = 0; y < h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(img.height - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(img.width - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, img.width - 1);
      const double wx = fx - x0;
      const double top = (1 - wx) * img.at(x0, y0) + wx * img.at(x1, y0);
      const double bot = (1 - wx) * img.at(x0, y1) + wx * img.at(x1, y1);
      out.at(x, y) = clamp_u8((1 - wy) * top + wy * bot);
    }
  }
  return out;
}

inline Rect clamp_rect(const Rect& r, int width, int height) {
  const int x0 = std::max(r.x, 0), y0 = std::max(r.y, 0);
  const int x1 = std::min(r.x + r.w, width), y1 = std::min(r.y + r.h, height);
  return {x0, y0, x1 - x0, y1 - y0};
}

// Crops after clamping the box to the image bounds.
inline GrayImage crop(const GrayImage& img, const Rect& box) {
  const Rect r = clamp_rect(box, img.width, img.height);
  if (r.empty()) fail(ErrorCode::kEmptyCrop, "crop box does not intersect the image");
  GrayImage out(r.w, r.h);
  for (int y = 0; y < r.h; ++y) {
    std::copy_n(img.pixels.begin() + static_cast<std::ptrdiff_t>(r.y + y) * img.width + r.x, r.w,
                out.pixels.begin() + static_cast<std::ptrdiff_t>(y) * r.w);
  }
  return out;
}

inline GrayImage flip_horizontal(const GrayImage& img) {
  GrayImage out(img.width, img.height);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) out.at(x, y) = img.at(img.width - 1 - x, y);
  }
  return out;
}

inline GrayImage flip_vertical(const GrayImage& img) {
  GrayImage out(img.width, img.height);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) out.at(x, y) = img.at(x, img.height - 1 - y);
  }
  return out;
}

inline double mean_abs_difference(const GrayImage& a, const GrayImage& b) {
  if (a.width != b.width || a.height != b.height) fail(ErrorCode::kSpecError, "image sizes differ");
  double acc = 0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) acc += std::abs(int(a.pixels[i]) - int(b.pixels[i]));
  return a.pixels.empty() ? 0.0 : acc / static_cast<double>(a.pixels.size());
}

// Separable Gaussian, radius ceil(3 sigma), replicate border.
inline GrayImage gaussian_blur(const GrayImage& img, double sigma) {
  if (!(sigma > 0.0)) return img;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) total += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= total;
  std::vector<double> tmp(img.pixels.size());
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * img.clamped(x + i, y);
      tmp[static_cast<std::size_t>(y) * img.width + x] = acc;
    }
  }
  GrayImage out(img.width, img.height);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        const int yy = std::clamp(y + i, 0, img.height - 1);
        acc += k[i + radius] * tmp[static_cast<std::size_t>(yy) * img.width + x];
      }
      out.at(x, y) = clamp_u8(acc);
    }
  }
  return out;
}

}  // namespace muzzle::image
