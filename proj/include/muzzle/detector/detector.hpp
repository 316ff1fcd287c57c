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

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "muzzle/detector/box.hpp"
#include "muzzle/error.hpp"
#include "muzzle/fileio.hpp"
#include "muzzle/image/codec.hpp"
#include "muzzle/image/ops.hpp"
#include "muzzle/nn/adam.hpp"
#include "muzzle/nn/checkpoint.hpp"
#include "muzzle/nn/network.hpp"
#include "muzzle/rng.hpp"

namespace muzzle::detect {

namespace fs = std::filesystem;
using image::GrayImage;
using nn::Network;

inline constexpr int kDetectorInputSize = 128;
inline constexpr int kGridSize = 8;
inline constexpr int kCellChannels = 5;  // tx, ty, tw, th, objectness logit
inline constexpr double kMinLogExtent = -10.0;

struct DetectorConfig {
  double conf_threshold = 0.25;
  double nms_iou = 0.45;
};

// Four conv/pool stages down to the 8x8 grid, two 3x3 context convs, a 1x1 head.
inline nn::NetworkSpec detector_net(std::uint64_t seed, int input_size = kDetectorInputSize) {
  nn::NetworkSpec spec;
  spec.input = {1, input_size, input_size, false};
  spec.seed = seed;
  spec.layers = {nn::Conv2d{8, 3, 1},  nn::Relu{}, nn::MaxPool{2}, nn::Conv2d{16, 3, 1}, nn::Relu{},
                 nn::MaxPool{2},       nn::Conv2d{32, 3, 1}, nn::Relu{}, nn::MaxPool{2}, nn::Conv2d{32, 3, 1},
                 nn::Relu{},           nn::MaxPool{2}, nn::Conv2d{64, 3, 1}, nn::Relu{}, nn::Conv2d{64, 3, 1},
                 nn::Relu{},           nn::Conv2d{kCellChannels, 1, 1}};
  return spec;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// log(1 + e^x) without overflow.
inline double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

// Channel-major [5, S, S] block for one image.
struct GridView {
  std::span<const float> values;
  int grid;
  double at(int channel, int row, int col) const {
    return values[(static_cast<std::size_t>(channel) * grid + row) * grid + col];
  }
};

inline BBox decode_cell(const GridView& g, int row, int col) {
  const double S = g.grid;
  BBox b;
  b.cx = (col + sigmoid(g.at(0, row, col))) / S;
  b.cy = (row + sigmoid(g.at(1, row, col))) / S;
  b.w = std::exp(std::clamp(g.at(2, row, col), kMinLogExtent, 0.0));
  b.h = std::exp(std::clamp(g.at(3, row, col), kMinLogExtent, 0.0));
  b.confidence = sigmoid(g.at(4, row, col));
  return b;
}

inline std::vector<BBox> decode_grid(const GridView& g, const DetectorConfig& cfg) {
  std::vector<BBox> boxes;
  for (int r = 0; r < g.grid; ++r) {
    for (int c = 0; c < g.grid; ++c) {
      BBox b = decode_cell(g, r, c);
      if (b.confidence >= cfg.conf_threshold) boxes.push_back(b);
    }
  }
  return nms(std::move(boxes), cfg.nms_iou);
}

struct LossWeights {
  double box = 5.0;
  double no_object = 0.5;
};

struct LossParts {
  double box = 0.0;
  double object = 0.0;
  double total() const { return box + object; }
};

inline std::pair<int, int> responsible_cell(const BBox& truth, int grid) {
  const int col = std::clamp(static_cast<int>(std::floor(truth.cx * grid)), 0, grid - 1);
  const int row = std::clamp(static_cast<int>(std::floor(truth.cy * grid)), 0, grid - 1);
  return {row, col};
}

// Squared error on the responsible cell's (sigmoid tx, sigmoid ty, tw, th)
// plus weighted objectness BCE over every cell. Writes dLoss/dOutput.
inline LossParts grid_loss(const GridView& g, const BBox& truth, const LossWeights& w, std::span<float> grad) {
  const int S = g.grid;
  const auto [row, col] = responsible_cell(truth, S);
  LossParts parts;
  auto gidx = [&](int ch, int r, int c) { return (static_cast<std::size_t>(ch) * S + r) * S + c; };
  std::fill(grad.begin(), grad.end(), 0.0f);
  for (int r = 0; r < S; ++r) {
    for (int c = 0; c < S; ++c) {
      const bool obj = r == row && c == col;
      const double x = g.at(4, r, c);
      const double weight = obj ? 1.0 : w.no_object;
      const double y = obj ? 1.0 : 0.0;
      parts.object += weight * (softplus(x) - y * x);
      grad[gidx(4, r, c)] = static_cast<float>(weight * (sigmoid(x) - y));
    }
  }
  const double target[4] = {truth.cx * S - col, truth.cy * S - row, std::log(truth.w), std::log(truth.h)};
  for (int k = 0; k < 2; ++k) {
    const double s = sigmoid(g.at(k, row, col));
    const double d = s - target[k];
    parts.box += w.box * d * d;
    grad[gidx(k, row, col)] = static_cast<float>(2.0 * w.box * d * s * (1.0 - s));
  }
  for (int k = 2; k < 4; ++k) {
    const double d = g.at(k, row, col) - target[k];
    parts.box += w.box * d * d;
    grad[gidx(k, row, col)] = static_cast<float>(2.0 * w.box * d);
  }
  return parts;
}

inline nn::Tensor<float> to_input_batch(const std::vector<const GrayImage*>& images, int size) {
  nn::Tensor<float> t({images.size(), 1, static_cast<std::size_t>(size), static_cast<std::size_t>(size)});
  for (std::size_t b = 0; b < images.size(); ++b) {
    const GrayImage& src = *images[b];
    const GrayImage img = (src.width == size && src.height == size) ? src : image::resize_bilinear(src, size, size);
    auto row = t.row(b);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) row[i] = img.pixels[i] / 255.0f;
  }
  return t;
}

struct DetectionSample {
  std::string file;
  GrayImage image;
  BBox box;
};

// Reads every <k>.json annotation {file, box:[cx,cy,w,h]} under root.
inline std::vector<DetectionSample> load_annotations(const fs::path& root) {
  if (!fs::is_directory(root)) fail(ErrorCode::kIoError, "annotation directory not found: " + root.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(root))
    if (e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end(), [](const fs::path& a, const fs::path& b) {
    const auto sa = a.stem().string(), sb = b.stem().string();
    return sa.size() != sb.size() ? sa.size() < sb.size() : sa < sb;
  });
  std::vector<DetectionSample> out;
  for (const auto& f : files) {
    const auto j = nlohmann::json::parse(read_file(f), nullptr, false);
    if (j.is_discarded() || !j.is_object()) fail(ErrorCode::kFormatError, "bad annotation " + f.string());
    if (!j.contains("box") || !j["box"].is_array() || j["box"].size() != 4) {
      fail(ErrorCode::kDataError, "annotation without a box: " + f.string());
    }
    DetectionSample s;
    s.file = j.value("file", f.stem().string() + ".png");
    const auto b = j["box"].get<std::vector<double>>();
    s.box = {b[0], b[1], b[2], b[3], 1.0};
    if (!s.box.valid()) fail(ErrorCode::kDataError, "annotation box out of range: " + f.string());
    s.image = image::load_image(root / s.file);
    out.push_back(std::move(s));
  }
  if (out.empty()) fail(ErrorCode::kEmptyDataset, "no annotations under " + root.string());
  return out;
}

// Shuffled index split; the first part holds round(n * train_fraction) items.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double train_fraction,
                                                                                   std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  SplitMix64 rng(seed);
  shuffle(std::span<std::size_t>(idx), rng);
  const auto k = static_cast<std::size_t>(std::llround(static_cast<double>(n) * train_fraction));
  return {{idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k)}, {idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end()}};
}

struct DetectorTrainConfig {
  int epochs = 50;
  int batch_size = 16;
  nn::AdamConfig adam{};
  LossWeights loss{};
  bool flips = true;
  std::uint64_t seed = 1;
};

struct DetectorEpochReport {
  int epoch = 0;  // 0 is the untrained evaluation pass
  double object_loss = 0.0;
  double box_loss = 0.0;
  double seconds = 0.0;
};

struct DetectorTrainResult {
  Network<float> net;
  nn::OptimizerState<float> opt;
  std::vector<DetectorEpochReport> epochs;
};

using DetectorEpochHook = std::function<void(const DetectorEpochReport&, const Network<float>&,
                                             const nn::OptimizerState<float>&)>;

inline BBox flip_box(BBox b, bool horizontal, bool vertical) {
  if (horizontal) b.cx = 1.0 - b.cx;
  if (vertical) b.cy = 1.0 - b.cy;
  return b;
}

// Mean per-image loss of the network on a sample set, without updates.
inline LossParts detector_loss(const Network<float>& net, const std::vector<DetectionSample>& samples,
                               const LossWeights& w) {
  const int size = net.input_shape().width;
  const int S = net.output_shape().width;
  LossParts total;
  constexpr std::size_t kChunk = 32;
  std::vector<float> grad(static_cast<std::size_t>(kCellChannels) * S * S);
  for (std::size_t lo = 0; lo < samples.size(); lo += kChunk) {
    std::vector<const GrayImage*> imgs;
    for (std::size_t i = lo; i < std::min(samples.size(), lo + kChunk); ++i) imgs.push_back(&samples[i].image);
    const auto out = net.forward(to_input_batch(imgs, size));
    for (std::size_t b = 0; b < imgs.size(); ++b) {
      const auto p = grid_loss({out.row(b), S}, samples[lo + b].box, w, grad);
      total.box += p.box;
      total.object += p.object;
    }
  }
  total.box /= static_cast<double>(samples.size());
  total.object /= static_cast<double>(samples.size());
  return total;
}

inline DetectorTrainResult train_detector(const std::vector<DetectionSample>& train, const DetectorTrainConfig& cfg,
                                          const DetectorEpochHook& on_epoch = {}) {
  if (train.empty()) fail(ErrorCode::kEmptyDataset, "detector training set is empty");
  for (const auto& s : train) {
    if (!s.box.valid()) fail(ErrorCode::kDataError, "training image without a valid box: " + s.file);
  }
  DetectorTrainResult res{Network<float>(detector_net(cfg.seed)), {}, {}};
  res.opt = nn::OptimizerState<float>::fresh(res.net.parameter_count(), cfg.adam);
  const int size = res.net.input_shape().width;
  const int S = res.net.output_shape().width;
  const std::size_t cell_block = static_cast<std::size_t>(kCellChannels) * S * S;

  std::vector<GrayImage> scaled;
  scaled.reserve(train.size());
  for (const auto& s : train) scaled.push_back(image::resize_bilinear(s.image, size, size));

  {
    std::vector<DetectionSample> view;
    for (std::size_t i = 0; i < train.size(); ++i) view.push_back({train[i].file, scaled[i], train[i].box});
    const auto p = detector_loss(res.net, view, cfg.loss);
    res.epochs.push_back({0, p.object, p.box, 0.0});
  }

  SplitMix64 rng(mix_seed(cfg.seed, 0xde7));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    shuffle(std::span<std::size_t>(order), rng);
    LossParts sum;
    for (std::size_t lo = 0; lo < order.size(); lo += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t hi = std::min(order.size(), lo + static_cast<std::size_t>(cfg.batch_size));
      std::vector<GrayImage> imgs;
      std::vector<BBox> boxes;
      for (std::size_t k = lo; k < hi; ++k) {
        const std::size_t i = order[k];
        const bool fh = cfg.flips && rng.bernoulli(0.5);
        const bool fv = cfg.flips && rng.bernoulli(0.5);
        GrayImage img = scaled[i];
        if (fh) img = image::flip_horizontal(img);
        if (fv) img = image::flip_vertical(img);
        imgs.push_back(std::move(img));
        boxes.push_back(flip_box(train[i].box, fh, fv));
      }
      std::vector<const GrayImage*> ptrs;
      for (const auto& im : imgs) ptrs.push_back(&im);
      const auto tr = res.net.trace(to_input_batch(ptrs, size));
      nn::Tensor<float> grad(tr.output.shape());
      const float inv = 1.0f / static_cast<float>(imgs.size());
      for (std::size_t b = 0; b < imgs.size(); ++b) {
        auto g = std::span<float>(grad.values()).subspan(b * cell_block, cell_block);
        const auto p = grid_loss({tr.output.row(b), S}, boxes[b], cfg.loss, g);
        for (auto& v : g) v *= inv;
        sum.box += p.box;
        sum.object += p.object;
      }
      const auto bw = res.net.backward(tr, grad);
      nn::adam_step(res.net, bw.gradients, res.opt);
    }
    nn::end_epoch(res.opt);
    DetectorEpochReport rep;
    rep.epoch = epoch;
    rep.object_loss = sum.object / static_cast<double>(order.size());
    rep.box_loss = sum.box / static_cast<double>(order.size());
    rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.epochs.push_back(rep);
    if (on_epoch) on_epoch(rep, res.net, res.opt);
  }
  return res;
}

class Detector {
 public:
  Detector() = default;
  explicit Detector(Network<float> net, DetectorConfig cfg = {}) : net_(std::move(net)), cfg_(cfg) {
    if (net_->output_shape().channels != kCellChannels || net_->output_shape().flat) {
      fail(ErrorCode::kModelError, "network does not produce a detection grid");
    }
  }

  static Detector load(const fs::path& path, DetectorConfig cfg = {}) {
    if (!fs::exists(path)) fail(ErrorCode::kModelError, "detector checkpoint not found: " + path.string());
    auto ck = nn::load_checkpoint(path);
    if (ck.meta.role != "detector") fail(ErrorCode::kModelError, "checkpoint role is '" + ck.meta.role + "', expected detector");
    return Detector(std::move(ck.network), cfg);
  }

  void save(const fs::path& path, const nn::OptimizerState<float>* opt = nullptr, int epoch = 0) const {
    nn::CheckpointMeta meta;
    meta.role = "detector";
    meta.epoch = epoch;
    meta.extra = {{"grid", grid()}, {"input_size", input_size()}};
    nn::save_checkpoint(path, network(), opt, meta);
  }

  bool trained() const { return net_.has_value(); }
  const DetectorConfig& config() const { return cfg_; }
  const Network<float>& network() const {
    if (!net_) fail(ErrorCode::kModelError, "detector has no trained network");
    return *net_;
  }
  int input_size() const { return network().input_shape().width; }
  int grid() const { return network().output_shape().width; }

  std::vector<BBox> detect(const GrayImage& img) const { return detect(img, cfg_.conf_threshold); }

  std::vector<BBox> detect(const GrayImage& img, double conf_threshold) const {
    return detect_batch({&img}, conf_threshold).at(0);
  }

  ImageBoxes detect_batch(const std::vector<const GrayImage*>& images, double conf_threshold) const {
    const auto& net = network();
    if (images.empty()) return {};
    for (const auto* im : images) {
      if (im->empty()) fail(ErrorCode::kEmptyImage, "cannot run detection on an empty image");
    }
    const auto out = net.forward(to_input_batch(images, input_size()));
    ImageBoxes result;
    DetectorConfig c = cfg_;
    c.conf_threshold = conf_threshold;
    for (std::size_t b = 0; b < images.size(); ++b) result.push_back(decode_grid({out.row(b), grid()}, c));
    return result;
  }

 private:
  std::optional<Network<float>> net_;
  DetectorConfig cfg_;
};

struct DetectorEvaluation {
  MapResult map;
  double top_box_accuracy = 0.0;
  std::size_t images = 0;
};

// Low-threshold predictions so the precision/recall curve is complete.
inline DetectorEvaluation evaluate_detector(const Detector& det, const std::vector<DetectionSample>& samples,
                                            double conf_threshold = 0.001) {
  ImageBoxes preds, truths;
  constexpr std::size_t kChunk = 32;
  for (std::size_t lo = 0; lo < samples.size(); lo += kChunk) {
    std::vector<const GrayImage*> imgs;
    for (std::size_t i = lo; i < std::min(samples.size(), lo + kChunk); ++i) imgs.push_back(&samples[i].image);
    for (auto& p : det.detect_batch(imgs, conf_threshold)) preds.push_back(std::move(p));
  }
  for (const auto& s : samples) truths.push_back({s.box});
  return {map_eval(preds, truths), top_box_accuracy(preds, truths), samples.size()};
}

}  // namespace muzzle::detect
