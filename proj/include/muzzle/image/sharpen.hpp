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

#include "muzzle/image/gray_image.hpp"

namespace muzzle::image {

// g = f + k * (s - f), where s is f convolved with the 3x3 kernel below
// (replicate padding). With k = 1 the output is the clamped convolution.
inline constexpr std::array<std::array<int, 3>, 3> kSharpenKernel{{{0, -1, 0}, {-1, 5, -1}, {0, -1, 0}}};

struct SharpenParams {
  double k = 1.0;
};

inline GrayImage sharpen(const GrayImage& img, const SharpenParams& p = {}) {
  if (img.width < 3 || img.height < 3) {
    fail(ErrorCode::kTooSmall, "sharpen needs at least 3x3, got " + std::to_string(img.width) + "x" +
                                   std::to_string(img.height));
  }
  if (!std::isfinite(p.k) || p.k < 0) fail(ErrorCode::kSpecError, "sharpen weight k must be finite and >= 0");
  GrayImage out(img.width, img.height);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      long long s = 0;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          s += kSharpenKernel[dy + 1][dx + 1] * img.clamped(x + dx, y + dy);
        }
      }
      const int f = img.at(x, y);
      if (p.k == 1.0) {
        out.at(x, y) = clamp_u8(s);
      } else {
        out.at(x, y) = clamp_u8(f + p.k * static_cast<double>(s - f));
      }
    }
  }
  return out;
}

}  // namespace muzzle::image
