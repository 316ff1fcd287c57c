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
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "muzzle/error.hpp"
#include "muzzle/fileio.hpp"
#include "muzzle/image/gray_image.hpp"
#include "muzzle/image/ops.hpp"
#include "muzzle/image/preprocess.hpp"
#include "muzzle/nn/checkpoint.hpp"
#include "muzzle/nn/network.hpp"
#include "muzzle/nn/tensor.hpp"

namespace muzzle::embed {

namespace fs = std::filesystem;
using image::GrayImage;
using nn::Network;
using nn::Tensor;

using Embedding = std::vector<float>;

inline constexpr std::array<int, 3> kSupportedDims = {64, 128, 256};

inline bool supported_dim(int d) {
  return std::find(kSupportedDims.begin(), kSupportedDims.end(), d) != kSupportedDims.end();
}

template <typename T>
double squared_l2(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) {
    fail(ErrorCode::kSpecError, "embedding dimensions differ: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return s;
}

inline double squared_l2(const Embedding& a, const Embedding& b) {
  return squared_l2<float>(std::span<const float>(a), std::span<const float>(b));
}

enum class Hardness { kEasy, kSemiHard, kHard };

inline const char* to_string(Hardness h) {
  switch (h) {
    case Hardness::kEasy: return "easy";
    case Hardness::kSemiHard: return "semi-hard";
    case Hardness::kHard: return "hard";
  }
  return "?";
}

// easy: gap >= alpha; semi-hard: 0 < gap < alpha; hard: gap <= 0, gap = d_n - d_p.
inline Hardness classify_triplet(double d_p, double d_n, double alpha) {
  const double gap = d_n - d_p;
  if (gap >= alpha) return Hardness::kEasy;
  if (gap > 0.0) return Hardness::kSemiHard;
  return Hardness::kHard;
}

struct TripletLossParams {
  double alpha = 0.5;
  bool mean = false;  // sum by default
};

// Rows of an embedding matrix.
struct TripletIndex {
  std::size_t anchor, positive, negative;
};

template <typename T>
struct TripletLossOutput {
  double loss = 0.0;
  std::size_t active = 0;  // triplets with a positive hinge
  Tensor<T> gradient;      // d loss / d embeddings, same shape as the input
};

// L = sum [d_p - d_n + alpha]_+ over the listed triplets. A hinge of exactly
// zero contributes no gradient.
template <typename T>
TripletLossOutput<T> triplet_loss(const Tensor<T>& embeddings, std::span<const TripletIndex> triplets,
                                  const TripletLossParams& params) {
  if (!(params.alpha > 0.0) || !std::isfinite(params.alpha)) fail(ErrorCode::kSpecError, "alpha must be finite and > 0");
  if (embeddings.rank() != 2) fail(ErrorCode::kSpecError, "embeddings must be a [n, d] matrix");
  const std::size_t n = embeddings.dim(0), d = embeddings.dim(1);
  TripletLossOutput<T> out;
  out.gradient = Tensor<T>(embeddings.shape());
  const double scale = params.mean && !triplets.empty() ? 1.0 / static_cast<double>(triplets.size()) : 1.0;
  for (const auto& t : triplets) {
    if (t.anchor >= n || t.positive >= n || t.negative >= n) fail(ErrorCode::kSpecError, "triplet index out of range");
    const auto a = embeddings.row(t.anchor), p = embeddings.row(t.positive), q = embeddings.row(t.negative);
    const double dp = squared_l2<T>(a, p), dn = squared_l2<T>(a, q);
    const double hinge = dp - dn + params.alpha;
    if (!(hinge > 0.0)) continue;
    out.loss += hinge * scale;
    ++out.active;
    auto ga = out.gradient.row(t.anchor), gp = out.gradient.row(t.positive), gn = out.gradient.row(t.negative);
    for (std::size_t k = 0; k < d; ++k) {
      const double av = a[k], pv = p[k], nv = q[k];
      ga[k] += static_cast<T>(scale * 2.0 * (nv - pv));
      gp[k] += static_cast<T>(scale * 2.0 * (pv - av));
      gn[k] += static_cast<T>(scale * 2.0 * (av - nv));
    }
  }
  return out;
}

// Pixel intensities mapped to [-1, 1], one channel.
inline Tensor<float> to_input_batch(std::span<const GrayImage* const> images, int size) {
  Tensor<float> t({images.size(), 1, static_cast<std::size_t>(size), static_cast<std::size_t>(size)});
  for (std::size_t b = 0; b < images.size(); ++b) {
    const GrayImage& img = *images[b];
    if (img.width != size || img.height != size) {
      fail(ErrorCode::kSpecError, "embedder input must be " + std::to_string(size) + "x" + std::to_string(size) +
                                      ", got " + std::to_string(img.width) + "x" + std::to_string(img.height));
    }
    auto row = t.row(b);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) row[i] = img.pixels[i] / 127.5f - 1.0f;
  }
  return t;
}

class Embedder {
 public:
  explicit Embedder(Network<float> net, double threshold = 0.0) : net_(std::move(net)), threshold_(threshold) {
    const auto o = net_.output_shape();
    const auto in = net_.input_shape();
    if (!o.flat || o.channels <= 0) fail(ErrorCode::kModelError, "embedder network must end in a flat vector");
    if (in.channels != 1 || in.width != in.height) fail(ErrorCode::kModelError, "embedder input must be square grayscale");
  }

  static Embedder load(const fs::path& path) {
    if (!fs::exists(path)) fail(ErrorCode::kModelError, "embedder checkpoint not found: " + path.string());
    auto ck = nn::load_checkpoint(path);
    if (ck.meta.role != "embedder") fail(ErrorCode::kModelError, "checkpoint role is '" + ck.meta.role + "', expected embedder");
    return Embedder(std::move(ck.network), ck.meta.threshold);
  }

  const Network<float>& network() const { return net_; }
  int dim() const { return net_.output_shape().channels; }
  int input_size() const { return net_.input_shape().width; }
  // Decision threshold stored with the checkpoint; 0 when never calibrated.
  double threshold() const { return threshold_; }

  Embedding embed(const GrayImage& preprocessed) const {
    const GrayImage* p = &preprocessed;
    const auto out = net_.forward(to_input_batch(std::span<const GrayImage* const>(&p, 1), input_size()));
    return {out.values().begin(), out.values().end()};
  }

  // Raw image -> preprocess -> embedding.
  Embedding embed_raw(const GrayImage& raw, const image::PreprocessParams& pp = {}) const {
    image::PreprocessParams p = pp;
    p.output_size = input_size();
    return embed(image::preprocess(raw, p));
  }

  Tensor<float> embed_matrix(std::span<const GrayImage* const> images) const {
    Tensor<float> out({images.size(), static_cast<std::size_t>(dim())});
    constexpr std::size_t kChunk = 64;
    for (std::size_t lo = 0; lo < images.size(); lo += kChunk) {
      const std::size_t hi = std::min(images.size(), lo + kChunk);
      const auto part = net_.forward(to_input_batch(images.subspan(lo, hi - lo), input_size()));
      std::copy(part.values().begin(), part.values().end(), out.values().begin() + static_cast<std::ptrdiff_t>(lo * dim()));
    }
    return out;
  }

 private:
  Network<float> net_;
  double threshold_;
};

struct EmbeddingRow {
  std::string id;
  std::string identity;
  Embedding vec;
};

// Header: id,identity,d0..d{D-1}.
inline void write_embeddings_csv(const fs::path& path, const std::vector<EmbeddingRow>& rows) {
  std::string out = "id,identity";
  const std::size_t d = rows.empty() ? 0 : rows.front().vec.size();
  for (std::size_t k = 0; k < d; ++k) out += ",d" + std::to_string(k);
  out += "\n";
  char buf[32];
  for (const auto& r : rows) {
    if (r.vec.size() != d) fail(ErrorCode::kSpecError, "embedding rows have mixed dimensions");
    out += r.id + "," + r.identity;
    for (float v : r.vec) {
      std::snprintf(buf, sizeof buf, ",%.9g", static_cast<double>(v));
      out += buf;
    }
    out += "\n";
  }
  write_file_atomic(path, out);
}

}  // namespace muzzle::embed
