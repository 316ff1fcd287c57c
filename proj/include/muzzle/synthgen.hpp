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
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include <json.hpp>

#include "muzzle/augment.hpp"
#include "muzzle/dataset.hpp"
#include "muzzle/error.hpp"
#include "muzzle/fileio.hpp"
#include "muzzle/image/codec.hpp"
#include "muzzle/image/ops.hpp"
#include "muzzle/parallel.hpp"
#include "muzzle/rng.hpp"

namespace muzzle::synth {

namespace fs = std::filesystem;
using image::GrayImage;

inline constexpr int kTextureSize = 256;

struct IdentitySpec {
  std::string id;
  std::uint64_t seed = 0;
  int bead_count = 80;
  double ridge_width = 3.0;
  double base_contrast = 130.0;
  double bead_spread = 25.0;   // per-bead brightness jitter
  double anisotropy = 1.0;     // >= 1; cell elongation
  double orientation_deg = 0.0;
  double pore_density = 0.5;   // expected pores per bead
};

// Identity parameters derived deterministically from the seed.
inline IdentitySpec identity_from_seed(std::string id, std::uint64_t seed) {
  SplitMix64 rng(mix_seed(seed, 0x1d));
  IdentitySpec s;
  s.id = std::move(id);
  s.seed = seed;
  s.bead_count = static_cast<int>(rng.between(40, 160));
  s.ridge_width = rng.uniform(2.0, 5.0);
  s.base_contrast = rng.uniform(90.0, 170.0);
  s.bead_spread = rng.uniform(5.0, 0.5 * s.base_contrast - 25.0);
  s.anisotropy = rng.uniform(1.0, 1.8);
  s.orientation_deg = rng.uniform(-90.0, 90.0);
  s.pore_density = rng.uniform(0.0, 1.5);
  return s;
}

// Nearest-point cells as bright domes separated by dark ridges.
inline GrayImage gen_identity_texture(const IdentitySpec& spec) {
  if (spec.bead_count < 4) fail(ErrorCode::kSpecError, "bead-count must be >= 4");
  SplitMix64 rng(mix_seed(spec.seed, 0x7e));
  const int n = spec.bead_count;
  const double th = spec.orientation_deg * std::numbers::pi / 180.0;
  const double c = std::cos(th), s = std::sin(th);
  const double aspect = std::max(1.0, spec.anisotropy);
  auto to_metric = [&](double x, double y) {
    return std::array<double, 2>{c * x + s * y, (-s * x + c * y) * aspect};
  };

  std::vector<std::array<double, 2>> pts(n);
  std::vector<double> level(n);
  const double ridge = 128.0 - spec.base_contrast / 2.0;
  const double bead = 128.0 + spec.base_contrast / 2.0;
  for (int i = 0; i < n; ++i) {
    pts[i] = to_metric(rng.uniform(0.0, kTextureSize), rng.uniform(0.0, kTextureSize));
    level[i] = bead + rng.uniform(-spec.bead_spread, spec.bead_spread);
  }
  const double radius = std::sqrt(double(kTextureSize) * kTextureSize / n / std::numbers::pi);
  const double soft = std::max(1.5, 0.45 * radius);
  const double half = spec.ridge_width / 2.0;

  GrayImage out(kTextureSize, kTextureSize);
  for (int y = 0; y < kTextureSize; ++y) {
    for (int x = 0; x < kTextureSize; ++x) {
      const auto p = to_metric(x + 0.5, y + 0.5);
      int i1 = 0, i2 = 1;
      double d1 = 1e300, d2 = 1e300;
      for (int i = 0; i < n; ++i) {
        const double dx = p[0] - pts[i][0], dy = p[1] - pts[i][1];
        const double d = dx * dx + dy * dy;
        if (d < d1) {
          d2 = d1, i2 = i1;
          d1 = d, i1 = i;
        } else if (d < d2) {
          d2 = d, i2 = i;
        }
      }
      const double gx = pts[i2][0] - pts[i1][0], gy = pts[i2][1] - pts[i1][1];
      const double boundary = (d2 - d1) / (2.0 * std::sqrt(gx * gx + gy * gy));
      double v = ridge;
      if (boundary > half) {
        const double t = std::min(1.0, (boundary - half) / soft);
        v = ridge + (level[i1] - ridge) * (t * (2.0 - t));
      }
      out.at(x, y) = image::clamp_u8(v);
    }
  }

  // Pores: small dark disks scattered over the texture.
  const int pores = static_cast<int>(std::lround(spec.pore_density * n));
  for (int k = 0; k < pores; ++k) {
    const double px = rng.uniform(0.0, kTextureSize), py = rng.uniform(0.0, kTextureSize);
    const double pr = rng.uniform(1.0, 1.8);
    for (int y = static_cast<int>(py - pr); y <= static_cast<int>(py + pr) + 1; ++y) {
      for (int x = static_cast<int>(px - pr); x <= static_cast<int>(px + pr) + 1; ++x) {
        if (x < 0 || y < 0 || x >= kTextureSize || y >= kTextureSize) continue;
        const double dx = x + 0.5 - px, dy = y + 0.5 - py;
        if (dx * dx + dy * dy <= pr * pr) out.at(x, y) = image::clamp_u8(ridge + 15.0);
      }
    }
  }
  return out;
}

// Capture variation ranges; every draw is uniform in [-r, r] or [lo, hi].
struct CaptureVariation {
  double rotation_deg = 4.0;
  double scale = 0.03;
  double translation = 0.02;
  double gain_lo = 0.85, gain_hi = 1.15;
  double bias = 12.0;
  double blur_lo = 0.4, blur_hi = 1.1;
  double noise_sigma = 3.0;
};

// Capture variation: mild warp, gain/bias lighting, blur, sensor noise.
inline GrayImage render_sample(const GrayImage& texture, std::uint64_t variation_seed, const CaptureVariation& v = {}) {
  SplitMix64 rng(mix_seed(variation_seed, 0x5a));
  augment::AffineParams p;
  p.rotation_deg = rng.uniform(-v.rotation_deg, v.rotation_deg);
  p.scale = 1.0 + rng.uniform(-v.scale, v.scale);
  p.tx = rng.uniform(-v.translation, v.translation) * texture.width;
  p.ty = rng.uniform(-v.translation, v.translation) * texture.height;
  GrayImage img = augment::warp_affine(texture, p);
  const double gain = rng.uniform(v.gain_lo, v.gain_hi), bias = rng.uniform(-v.bias, v.bias);
  for (auto& px : img.pixels) px = image::clamp_u8(128.0 + gain * (px - 128.0) + bias);
  img = image::gaussian_blur(img, rng.uniform(v.blur_lo, v.blur_hi));
  for (auto& px : img.pixels) px = image::clamp_u8(px + v.noise_sigma * rng.normal());
  return img;
}

inline GrayImage render_sample(const IdentitySpec& spec, std::uint64_t variation_seed, const CaptureVariation& v = {}) {
  return render_sample(gen_identity_texture(spec), variation_seed, v);
}

struct GenConfig {
  int train_ids = 32;
  int val_ids = 8;
  int test_ids = 8;
  int images_per_id = 12;
  std::uint64_t master_seed = 0;
  CaptureVariation variation{};
};

// Identity counts in the proportions 620:164:42.
inline std::array<int, 3> reference_split(int total) {
  const int train = static_cast<int>(std::lround(total * 620.0 / 826.0));
  const int val = static_cast<int>(std::lround(total * 164.0 / 826.0));
  return {train, val, total - train - val};
}

inline void require_empty_dir(const fs::path& root) {
  if (fs::exists(root) && !(fs::is_directory(root) && fs::is_empty(root))) {
    fail(ErrorCode::kRefuseOverwrite, "output directory is not empty: " + root.string());
  }
}

inline std::string identity_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "cattle-%05d", index);
  return buf;
}

// Writes <root>/<split>/<id>/<k>.png and manifest.json.
inline data::DatasetManifest gen_dataset(const fs::path& root, const GenConfig& cfg) {
  if (cfg.train_ids < 1 || cfg.val_ids < 1 || cfg.test_ids < 1 || cfg.images_per_id < 1) {
    fail(ErrorCode::kSpecError, "dataset counts must be >= 1");
  }
  require_empty_dir(root);
  data::DatasetManifest m;
  m.master_seed = cfg.master_seed;
  struct Job {
    std::string split;
    int index;
  };
  std::vector<Job> jobs;
  const std::array<std::pair<const char*, int>, 3> splits = {
      {{"train", cfg.train_ids}, {"val", cfg.val_ids}, {"test", cfg.test_ids}}};
  int index = 0;
  for (const auto& [name, count] : splits) {
    for (int i = 0; i < count; ++i) jobs.push_back({name, index++});
  }
  std::vector<data::IdentityEntry> entries(jobs.size());
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    auto& e = entries[j];
    e.id = identity_name(jobs[j].index);
    e.seed = mix_seed(cfg.master_seed, static_cast<std::uint64_t>(jobs[j].index));
    for (int k = 0; k < cfg.images_per_id; ++k) {
      e.files.push_back(jobs[j].split + "/" + e.id + "/" + std::to_string(k) + ".png");
      e.variation_seeds.push_back(mix_seed(e.seed, static_cast<std::uint64_t>(k) + 1));
    }
  }
  fs::create_directories(root);
  parallel_for(static_cast<std::int64_t>(jobs.size()), [&](std::int64_t j) {
    const auto& e = entries[static_cast<std::size_t>(j)];
    const GrayImage tex = gen_identity_texture(identity_from_seed(e.id, e.seed));
    for (std::size_t k = 0; k < e.files.size(); ++k) {
      image::save_png(root / e.files[k], render_sample(tex, e.variation_seeds[k], cfg.variation));
    }
  });
  for (std::size_t j = 0; j < jobs.size(); ++j) m.splits[jobs[j].split].push_back(std::move(entries[j]));
  data::save_manifest(root, m);
  return m;
}

// Detection scenes: a cluttered background with pasted muzzle patches.
struct SceneConfig {
  int size = 256;
  double min_fraction = 0.25;
  double max_fraction = 0.60;
};

struct Scene {
  GrayImage image;
  std::vector<std::array<double, 4>> boxes;  // cx, cy, w, h as fractions
};

inline GrayImage scene_background(int size, SplitMix64& rng) {
  constexpr int kGrid = 6;
  std::array<double, (kGrid + 1) * (kGrid + 1)> knots;
  const double base = rng.uniform(60.0, 190.0), amp = rng.uniform(10.0, 50.0);
  for (auto& k : knots) k = base + amp * rng.uniform(-1.0, 1.0);
  GrayImage img(size, size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double gx = double(x) / size * kGrid, gy = double(y) / size * kGrid;
      const int x0 = static_cast<int>(gx), y0 = static_cast<int>(gy);
      const double fx = gx - x0, fy = gy - y0;
      auto k = [&](int i, int j) { return knots[static_cast<std::size_t>(j) * (kGrid + 1) + i]; };
      const double v = (1 - fy) * ((1 - fx) * k(x0, y0) + fx * k(x0 + 1, y0)) + fy * ((1 - fx) * k(x0, y0 + 1) + fx * k(x0 + 1, y0 + 1));
      img.at(x, y) = image::clamp_u8(v + 6.0 * rng.normal());
    }
  }
  // A few soft blobs and straight strokes as clutter.
  const int blobs = static_cast<int>(rng.between(2, 6));
  for (int b = 0; b < blobs; ++b) {
    const double cx = rng.uniform(0, size), cy = rng.uniform(0, size), r = rng.uniform(0.05, 0.2) * size;
    const double delta = rng.uniform(-60.0, 60.0);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const double d2 = ((x - cx) * (x - cx) + (y - cy) * (y - cy)) / (r * r);
        if (d2 < 4.0) img.at(x, y) = image::clamp_u8(img.at(x, y) + delta * std::exp(-d2));
      }
  }
  const int strokes = static_cast<int>(rng.between(0, 3));
  for (int s = 0; s < strokes; ++s) {
    const double x0 = rng.uniform(0, size), y0 = rng.uniform(0, size), ang = rng.uniform(0, std::numbers::pi);
    const double len = rng.uniform(0.2, 0.8) * size, value = rng.uniform(0, 255);
    for (double t = 0; t < len; t += 0.5) {
      const int x = static_cast<int>(x0 + t * std::cos(ang)), y = static_cast<int>(y0 + t * std::sin(ang));
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
          if (x + dx >= 0 && y + dy >= 0 && x + dx < size && y + dy < size) img.at(x + dx, y + dy) = image::clamp_u8(value);
    }
  }
  return img;
}

// Pastes each patch at a random non-overlapping position.
inline Scene render_scene(const std::vector<GrayImage>& patches, const SceneConfig& cfg, SplitMix64& rng) {
  Scene scene{scene_background(cfg.size, rng), {}};
  std::vector<image::Rect> placed;
  for (const auto& patch : patches) {
    for (int attempt = 0; attempt < 100; ++attempt) {
      const int w = static_cast<int>(std::lround(rng.uniform(cfg.min_fraction, cfg.max_fraction) * cfg.size));
      const int h = std::clamp(static_cast<int>(std::lround(w * rng.uniform(0.8, 1.25))), 4, cfg.size);
      const int x = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.size - w + 1)));
      const int y = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.size - h + 1)));
      const image::Rect r{x, y, w, h};
      const bool overlaps = std::any_of(placed.begin(), placed.end(), [&](const image::Rect& o) {
        return r.x < o.x + o.w && o.x < r.x + r.w && r.y < o.y + o.h && o.y < r.y + r.h;
      });
      if (overlaps) continue;
      const GrayImage scaled = image::resize_bilinear(patch, w, h);
      for (int yy = 0; yy < h; ++yy)
        for (int xx = 0; xx < w; ++xx) scene.image.at(x + xx, y + yy) = scaled.at(xx, yy);
      placed.push_back(r);
      scene.boxes.push_back({(x + w / 2.0) / cfg.size, (y + h / 2.0) / cfg.size, double(w) / cfg.size, double(h) / cfg.size});
      break;
    }
  }
  return scene;
}

inline Scene gen_scene(std::uint64_t seed, int muzzles, const SceneConfig& cfg) {
  SplitMix64 rng(mix_seed(seed, 0x5c));
  std::vector<GrayImage> patches;
  for (int i = 0; i < muzzles; ++i) {
    const auto spec = identity_from_seed("scene", mix_seed(seed, 100 + i));
    patches.push_back(render_sample(spec, mix_seed(seed, 200 + i)));
  }
  return render_scene(patches, cfg, rng);
}

// Writes <root>/<k>.png plus <root>/<k>.json {file, box}.
inline void gen_scenes(const fs::path& root, int count, std::uint64_t master_seed, const SceneConfig& cfg = {}) {
  if (count < 1) fail(ErrorCode::kSpecError, "scene count must be >= 1");
  require_empty_dir(root);
  fs::create_directories(root);
  parallel_for(count, [&](std::int64_t k) {
    const Scene s = gen_scene(mix_seed(master_seed, static_cast<std::uint64_t>(k)), 1, cfg);
    const std::string file = std::to_string(k) + ".png";
    image::save_png(root / file, s.image);
    const auto& b = s.boxes.at(0);
    const nlohmann::json ann = {{"file", file}, {"box", {b[0], b[1], b[2], b[3]}}};
    write_file_atomic(root / (std::to_string(k) + ".json"), ann.dump() + "\n");
  });
}

}  // namespace muzzle::synth
