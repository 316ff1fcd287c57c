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
#include <numbers>
#include <set>
#include <utility>
#include <vector>

#include "muzzle/error.hpp"
#include "muzzle/image/gray_image.hpp"
#include "muzzle/image/ops.hpp"
#include "muzzle/rng.hpp"

namespace muzzle::augment {

using image::GrayImage;
using image::Rect;

struct BlackoutConfig {
  double probability = 0.3;
  double min_fraction = 0.05;
  double max_fraction = 0.2;
};

struct SaltPepperConfig {
  double probability = 0.3;
  double salt_density = 0.01;
  double pepper_density = 0.01;
};

struct AugmentConfig {
  double rotation_deg = 15.0;
  double zoom = 0.10;
  double crop_fraction = 0.10;
  double shear_deg = 10.0;
  double translation = 0.10;
  double hflip_probability = 0.5;
  double vflip_probability = 0.1;
  BlackoutConfig blackout;
  SaltPepperConfig salt_pepper;
  std::uint64_t seed = 0;

  static AugmentConfig off() {
    AugmentConfig c;
    c.rotation_deg = c.zoom = c.crop_fraction = c.shear_deg = c.translation = 0.0;
    c.hflip_probability = c.vflip_probability = 0.0;
    c.blackout.probability = 0.0;
    c.salt_pepper.probability = 0.0;
    return c;
  }

  void validate() const {
    auto prob = [](double p, const char* name) {
      if (!(p >= 0.0 && p <= 1.0)) fail(ErrorCode::kSpecError, std::string(name) + " must be in [0,1]");
    };
    prob(hflip_probability, "hflip probability");
    prob(vflip_probability, "vflip probability");
    prob(blackout.probability, "blackout probability");
    prob(salt_pepper.probability, "salt-pepper probability");
    auto density = [](double d, const char* name) {
      if (!(d >= 0.0 && d <= 0.5)) fail(ErrorCode::kSpecError, std::string(name) + " must be in [0,0.5]");
    };
    density(salt_pepper.salt_density, "salt density");
    density(salt_pepper.pepper_density, "pepper density");
    if (!(blackout.min_fraction >= 0.0 && blackout.min_fraction <= blackout.max_fraction && blackout.max_fraction <= 1.0)) {
      fail(ErrorCode::kSpecError, "blackout fractions must satisfy 0 <= min <= max <= 1");
    }
    for (double r : {rotation_deg, zoom, crop_fraction, shear_deg, translation}) {
      if (!(r >= 0.0) || !std::isfinite(r)) fail(ErrorCode::kSpecError, "augmentation ranges must be finite and >= 0");
    }
  }
};

// (row, col) coordinate sets.
using Coord = std::pair<int, int>;

struct RegionSets {
  std::vector<Coord> blackout;
  std::vector<Coord> salt;
  std::vector<Coord> pepper;
};

// F_aug = (F . B) + C: pixels inside the region become r, the rest are kept.
inline GrayImage blackout(const GrayImage& img, const Rect& region, std::uint8_t r) {
  if (region.empty()) return img;
  if (region.x < 0 || region.y < 0 || region.x + region.w > img.width || region.y + region.h > img.height) {
    fail(ErrorCode::kSpecError, "blackout region lies outside the image");
  }
  GrayImage out = img;
  for (int y = region.y; y < region.y + region.h; ++y) {
    for (int x = region.x; x < region.x + region.w; ++x) out.at(x, y) = r;
  }
  return out;
}

inline std::vector<Coord> rect_coords(const Rect& region) {
  std::vector<Coord> c;
  for (int y = region.y; y < region.y + region.h; ++y)
    for (int x = region.x; x < region.x + region.w; ++x) c.emplace_back(y, x);
  return c;
}

// F_aug = ((F . S) + R) . P: salt coordinates become 255, pepper become 0.
inline GrayImage salt_pepper(const GrayImage& img, const RegionSets& sets) {
  auto check = [&](const std::vector<Coord>& cs) {
    for (const auto& [r, c] : cs) {
      if (r < 0 || c < 0 || r >= img.height || c >= img.width) {
        fail(ErrorCode::kSpecError, "salt/pepper coordinate out of bounds");
      }
    }
  };
  check(sets.salt);
  check(sets.pepper);
  const std::set<Coord> salt(sets.salt.begin(), sets.salt.end());
  for (const auto& p : sets.pepper) {
    if (salt.count(p)) fail(ErrorCode::kSpecError, "salt and pepper sets overlap");
  }
  GrayImage out = img;
  for (const auto& [r, c] : sets.salt) out.at(c, r) = 255;
  for (const auto& [r, c] : sets.pepper) out.at(c, r) = 0;
  return out;
}

// Independent Bernoulli draws per pixel; a pixel drawn for both keeps salt.
inline RegionSets sample_salt_pepper(int width, int height, double salt_density, double pepper_density,
                                     SplitMix64& rng) {
  RegionSets s;
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const bool salt = rng.bernoulli(salt_density);
      const bool pepper = rng.bernoulli(pepper_density);
      if (salt) s.salt.emplace_back(r, c);
      else if (pepper) s.pepper.emplace_back(r, c);
    }
  }
  return s;
}

inline Rect sample_blackout_region(int width, int height, const BlackoutConfig& cfg, SplitMix64& rng) {
  const int w = std::clamp(static_cast<int>(std::lround(rng.uniform(cfg.min_fraction, cfg.max_fraction) * width)), 1, width);
  const int h = std::clamp(static_cast<int>(std::lround(rng.uniform(cfg.min_fraction, cfg.max_fraction) * height)), 1, height);
  const int x = static_cast<int>(rng.below(static_cast<std::uint64_t>(width - w + 1)));
  const int y = static_cast<int>(rng.below(static_cast<std::uint64_t>(height - h + 1)));
  return {x, y, w, h};
}

struct AffineParams {
  double rotation_deg = 0.0;  // counter-clockwise as displayed
  double scale = 1.0;
  double shear_deg = 0.0;
  double tx = 0.0;  // pixels
  double ty = 0.0;
};

// Inverse-mapped bilinear warp about the image center with replicate border.
inline GrayImage warp_affine(const GrayImage& img, const AffineParams& p) {
  const double th = p.rotation_deg * std::numbers::pi / 180.0;
  const double sh = std::tan(p.shear_deg * std::numbers::pi / 180.0);
  const double s = p.scale > 1e-3 ? p.scale : 1e-3;
  // Forward A = R(th) * Shear(sh) * s, in y-down coordinates.
  const double c = std::cos(th), sn = std::sin(th);
  const double a00 = s * c, a01 = s * (c * sh + sn);
  const double a10 = -s * sn, a11 = s * (-sn * sh + c);
  const double det = a00 * a11 - a01 * a10;
  const double i00 = a11 / det, i01 = -a01 / det, i10 = -a10 / det, i11 = a00 / det;
  const double cx = (img.width - 1) / 2.0, cy = (img.height - 1) / 2.0;
  GrayImage out(img.width, img.height);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const double dx = x - cx - p.tx, dy = y - cy - p.ty;
      const double sx = std::clamp(i00 * dx + i01 * dy + cx, 0.0, double(img.width - 1));
      const double sy = std::clamp(i10 * dx + i11 * dy + cy, 0.0, double(img.height - 1));
      const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
      const int x1 = std::min(x0 + 1, img.width - 1), y1 = std::min(y0 + 1, img.height - 1);
      const double wx = sx - x0, wy = sy - y0;
      const double top = (1 - wx) * img.at(x0, y0) + wx * img.at(x1, y0);
      const double bot = (1 - wx) * img.at(x0, y1) + wx * img.at(x1, y1);
      out.at(x, y) = image::clamp_u8((1 - wy) * top + wy * bot);
    }
  }
  return out;
}

// Rotation/zoom/shear/translation, a random crop resized back, then flips.
inline GrayImage random_affine(const GrayImage& img, const AugmentConfig& cfg, SplitMix64& rng) {
  GrayImage out = img;
  AffineParams p;
  p.rotation_deg = rng.uniform(-cfg.rotation_deg, cfg.rotation_deg);
  p.scale = 1.0 + rng.uniform(-cfg.zoom, cfg.zoom);
  p.shear_deg = rng.uniform(-cfg.shear_deg, cfg.shear_deg);
  p.tx = rng.uniform(-cfg.translation, cfg.translation) * img.width;
  p.ty = rng.uniform(-cfg.translation, cfg.translation) * img.height;
  if (p.rotation_deg != 0.0 || p.scale != 1.0 || p.shear_deg != 0.0 || p.tx != 0.0 || p.ty != 0.0) {
    out = warp_affine(out, p);
  }
  if (cfg.crop_fraction > 0.0) {
    const double keep = 1.0 - rng.uniform(0.0, std::min(cfg.crop_fraction, 0.9));
    const int cw = std::max(1, static_cast<int>(std::lround(keep * img.width)));
    const int ch = std::max(1, static_cast<int>(std::lround(keep * img.height)));
    if (cw < img.width || ch < img.height) {
      const int x = static_cast<int>(rng.below(static_cast<std::uint64_t>(img.width - cw + 1)));
      const int y = static_cast<int>(rng.below(static_cast<std::uint64_t>(img.height - ch + 1)));
      out = image::resize_bilinear(image::crop(out, {x, y, cw, ch}), img.width, img.height);
    }
  }
  if (rng.bernoulli(cfg.hflip_probability)) out = image::flip_horizontal(out);
  if (rng.bernoulli(cfg.vflip_probability)) out = image::flip_vertical(out);
  return out;
}

inline GrayImage augment_image(const GrayImage& img, const AugmentConfig& cfg, SplitMix64& rng) {
  GrayImage out = random_affine(img, cfg, rng);
  if (rng.bernoulli(cfg.blackout.probability)) {
    const Rect region = sample_blackout_region(out.width, out.height, cfg.blackout, rng);
    out = blackout(out, region, static_cast<std::uint8_t>(rng.below(256)));
  }
  if (rng.bernoulli(cfg.salt_pepper.probability)) {
    out = salt_pepper(out, sample_salt_pepper(out.width, out.height, cfg.salt_pepper.salt_density,
                                              cfg.salt_pepper.pepper_density, rng));
  }
  return out;
}

// Training-only: anchor, positive and negative are augmented independently.
inline std::array<GrayImage, 3> augment_triplet(const std::array<GrayImage, 3>& images, const AugmentConfig& cfg,
                                                SplitMix64& rng) {
  return {augment_image(images[0], cfg, rng), augment_image(images[1], cfg, rng), augment_image(images[2], cfg, rng)};
}

}  // namespace muzzle::augment
