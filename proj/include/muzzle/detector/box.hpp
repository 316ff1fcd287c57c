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
#include <numeric>
#include <vector>

#include "muzzle/error.hpp"

namespace muzzle::detect {

// Center/extent box in image fractions.
struct BBox {
  double cx = 0.5, cy = 0.5, w = 0.0, h = 0.0;
  double confidence = 1.0;

  bool valid() const { return cx >= 0 && cx <= 1 && cy >= 0 && cy <= 1 && w > 0 && w <= 1 && h > 0 && h <= 1; }
  double x0() const { return cx - w / 2; }
  double x1() const { return cx + w / 2; }
  double y0() const { return cy - h / 2; }
  double y1() const { return cy + h / 2; }
};

inline double iou(const BBox& a, const BBox& b) {
  const double iw = std::max(0.0, std::min(a.x1(), b.x1()) - std::max(a.x0(), b.x0()));
  const double ih = std::max(0.0, std::min(a.y1(), b.y1()) - std::max(a.y0(), b.y0()));
  const double inter = iw * ih;
  const double uni = (a.x1() - a.x0()) * (a.y1() - a.y0()) + (b.x1() - b.x0()) * (b.y1() - b.y0()) - inter;
  return uni > 0.0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

// Descending confidence; ties by ascending cx then cy.
inline bool confidence_order(const BBox& a, const BBox& b) {
  if (a.confidence != b.confidence) return a.confidence > b.confidence;
  if (a.cx != b.cx) return a.cx < b.cx;
  return a.cy < b.cy;
}

// Greedy suppression: a box is dropped if its IoU with a kept box exceeds the threshold.
inline std::vector<BBox> nms(std::vector<BBox> boxes, double iou_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) fail(ErrorCode::kSpecError, "nms threshold must be in (0,1]");
  std::stable_sort(boxes.begin(), boxes.end(), confidence_order);
  std::vector<BBox> kept;
  for (const auto& b : boxes) {
    const bool suppressed =
        std::any_of(kept.begin(), kept.end(), [&](const BBox& k) { return iou(k, b) > iou_threshold; });
    if (!suppressed) kept.push_back(b);
  }
  return kept;
}

using ImageBoxes = std::vector<std::vector<BBox>>;

// 101-point interpolated AP for one IoU threshold, single class.
inline double average_precision(const ImageBoxes& predictions, const ImageBoxes& truths, double iou_threshold) {
  if (predictions.size() != truths.size()) fail(ErrorCode::kSpecError, "prediction/ground-truth image counts differ");
  std::size_t total_truth = 0;
  for (const auto& t : truths) total_truth += t.size();
  if (total_truth == 0) return 0.0;

  struct Ref {
    std::size_t image, index;
    double confidence;
  };
  std::vector<Ref> order;
  for (std::size_t i = 0; i < predictions.size(); ++i)
    for (std::size_t j = 0; j < predictions[i].size(); ++j) order.push_back({i, j, predictions[i][j].confidence});
  std::stable_sort(order.begin(), order.end(), [](const Ref& a, const Ref& b) { return a.confidence > b.confidence; });

  std::vector<std::vector<char>> used(truths.size());
  for (std::size_t i = 0; i < truths.size(); ++i) used[i].assign(truths[i].size(), 0);
  std::vector<double> precision, recall;
  std::size_t tp = 0, fp = 0;
  for (const auto& r : order) {
    const BBox& p = predictions[r.image][r.index];
    double best = -1.0;
    std::size_t best_j = 0;
    for (std::size_t j = 0; j < truths[r.image].size(); ++j) {
      if (used[r.image][j]) continue;
      const double v = iou(p, truths[r.image][j]);
      if (v > best) best = v, best_j = j;
    }
    if (best >= iou_threshold) {
      used[r.image][best_j] = 1;
      ++tp;
    } else {
      ++fp;
    }
    precision.push_back(double(tp) / double(tp + fp));
    recall.push_back(double(tp) / double(total_truth));
  }
  // Precision envelope from the right.
  for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double sum = 0.0;
  std::size_t k = 0;
  for (int step = 0; step <= 100; ++step) {
    const double r = step / 100.0;
    while (k < recall.size() && recall[k] < r - 1e-12) ++k;
    if (k < recall.size()) sum += precision[k];
  }
  return sum / 101.0;
}

struct MapResult {
  double map50 = 0.0;
  double map50_95 = 0.0;
  std::array<double, 10> ap{};  // thresholds 0.50, 0.55, ..., 0.95
};

inline MapResult map_eval(const ImageBoxes& predictions, const ImageBoxes& truths) {
  MapResult r;
  for (int t = 0; t < 10; ++t) r.ap[t] = average_precision(predictions, truths, 0.5 + 0.05 * t);
  r.map50 = r.ap[0];
  r.map50_95 = std::accumulate(r.ap.begin(), r.ap.end(), 0.0) / 10.0;
  return r;
}

// Fraction of images whose most confident box overlaps a ground truth by IoU >= 0.5.
inline double top_box_accuracy(const ImageBoxes& predictions, const ImageBoxes& truths) {
  if (predictions.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i].empty()) continue;
    const BBox top = *std::min_element(predictions[i].begin(), predictions[i].end(), confidence_order);
    hits += std::any_of(truths[i].begin(), truths[i].end(), [&](const BBox& t) { return iou(top, t) >= 0.5; });
  }
  return double(hits) / double(predictions.size());
}

}  // namespace muzzle::detect
