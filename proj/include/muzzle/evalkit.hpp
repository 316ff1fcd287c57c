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
#include <map>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "muzzle/embedder.hpp"
#include "muzzle/error.hpp"
#include "muzzle/nn/tensor.hpp"
#include "muzzle/rng.hpp"

namespace muzzle::eval {

struct Pair {
  std::size_t a, b;
  bool same;
};

struct ScoredPair {
  double distance;
  bool same;
};

inline std::vector<ScoredPair> pair_distances(const nn::Tensor<float>& embeddings, std::span<const Pair> pairs) {
  const std::size_t n = embeddings.rank() == 2 ? embeddings.dim(0) : 0;
  std::vector<ScoredPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    if (p.a >= n || p.b >= n) fail(ErrorCode::kDataError, "pair references a sample without an embedding");
    out.push_back({embed::squared_l2<float>(embeddings.row(p.a), embeddings.row(p.b)), p.same});
  }
  return out;
}

// Every unordered pair i < j.
inline std::vector<Pair> all_pairs(std::span<const int> labels) {
  std::vector<Pair> out;
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (std::size_t j = i + 1; j < labels.size(); ++j) out.push_back({i, j, labels[i] == labels[j]});
  return out;
}

// Up to `per_class` distinct same and different pairs, equal counts of each,
// one orientation per pair.
inline std::vector<Pair> sample_balanced_pairs(std::span<const int> labels, std::size_t per_class, std::uint64_t seed) {
  SplitMix64 rng(seed);
  const std::size_t n = labels.size();
  std::vector<Pair> pos;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (labels[i] == labels[j]) pos.push_back({i, j, true});
  const std::size_t total = n < 2 ? 0 : n * (n - 1) / 2;
  const std::size_t neg_total = total - pos.size();
  const std::size_t k = std::min({per_class, pos.size(), neg_total});
  shuffle(std::span<Pair>(pos), rng);
  pos.resize(k);

  std::vector<Pair> neg;
  if (neg_total <= 4'000'000) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        if (labels[i] != labels[j]) neg.push_back({i, j, false});
    shuffle(std::span<Pair>(neg), rng);
    neg.resize(k);
  } else {
    std::set<std::pair<std::size_t, std::size_t>> seen;
    while (neg.size() < k) {
      std::size_t i = rng.below(n), j = rng.below(n);
      if (i == j || labels[i] == labels[j]) continue;
      if (i > j) std::swap(i, j);
      if (seen.emplace(i, j).second) neg.push_back({i, j, false});
    }
  }
  std::vector<Pair> out = pos;
  out.insert(out.end(), neg.begin(), neg.end());
  return out;
}

struct ValFar {
  double val = 0.0;
  double far = 0.0;
};

inline std::pair<std::size_t, std::size_t> class_counts(std::span<const ScoredPair> pairs) {
  std::size_t same = 0;
  for (const auto& p : pairs) same += p.same;
  return {same, pairs.size() - same};
}

// "Same" is predicted when distance <= d.
inline ValFar val_far(std::span<const ScoredPair> pairs, double d) {
  const auto [n_same, n_diff] = class_counts(pairs);
  if (n_same == 0 || n_diff == 0) fail(ErrorCode::kDataError, "val/far needs both same and different pairs");
  std::size_t ta = 0, fa = 0;
  for (const auto& p : pairs) {
    if (p.distance <= d) (p.same ? ta : fa) += 1;
  }
  return {double(ta) / double(n_same), double(fa) / double(n_diff)};
}

struct OperatingPoint {
  double threshold = 0.0;
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  double accuracy = 0.0, precision = 0.0, f1 = 0.0, tpr = 0.0, fpr = 0.0;
  double val = 0.0, far = 0.0;  // equal to tpr and fpr
};

inline OperatingPoint point_from_counts(double threshold, std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn) {
  OperatingPoint o;
  o.threshold = threshold;
  o.tp = tp, o.fp = fp, o.tn = tn, o.fn = fn;
  const double total = double(tp + fp + tn + fn);
  o.accuracy = double(tp + tn) / total;
  o.precision = tp + fp ? double(tp) / double(tp + fp) : 0.0;
  o.tpr = double(tp) / double(tp + fn);
  o.fpr = double(fp) / double(fp + tn);
  o.f1 = tp ? 2.0 * double(tp) / double(2 * tp + fp + fn) : 0.0;
  o.val = o.tpr;
  o.far = o.fpr;
  return o;
}

inline OperatingPoint metrics_at_threshold(std::span<const ScoredPair> pairs, double d) {
  const auto [n_same, n_diff] = class_counts(pairs);
  if (n_same == 0 || n_diff == 0) fail(ErrorCode::kDataError, "metrics need both same and different pairs");
  std::size_t tp = 0, fp = 0;
  for (const auto& p : pairs) {
    if (p.distance <= d) (p.same ? tp : fp) += 1;
  }
  return point_from_counts(d, tp, fp, n_diff - fp, n_same - tp);
}

// Operating points at every distinct observed distance, ascending.
inline std::vector<OperatingPoint> sweep(std::span<const ScoredPair> pairs) {
  const auto [n_same, n_diff] = class_counts(pairs);
  if (n_same == 0 || n_diff == 0) fail(ErrorCode::kDataError, "threshold sweep needs both same and different pairs");
  std::vector<ScoredPair> sorted(pairs.begin(), pairs.end());
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.distance < b.distance; });
  std::vector<OperatingPoint> out;
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < sorted.size();) {
    const double t = sorted[i].distance;
    for (; i < sorted.size() && sorted[i].distance == t; ++i) (sorted[i].same ? tp : fp) += 1;
    out.push_back(point_from_counts(t, tp, fp, n_diff - fp, n_same - tp));
  }
  return out;
}

// Largest observed threshold whose FAR does not exceed the target.
inline OperatingPoint val_at_far(std::span<const ScoredPair> pairs, double far_target) {
  if (!(far_target > 0.0 && far_target < 1.0)) fail(ErrorCode::kSpecError, "far target must be in (0,1)");
  const auto [n_same, n_diff] = class_counts(pairs);
  if (n_same == 0 || n_diff == 0) fail(ErrorCode::kDataError, "val@far needs both same and different pairs");
  if (static_cast<double>(n_diff) * far_target < 1.0) {
    fail(ErrorCode::kInsufficientPairs, std::to_string(n_diff) + " different-identity pairs cannot resolve FAR " +
                                            std::to_string(far_target));
  }
  const auto points = sweep(pairs);
  for (std::size_t i = points.size(); i-- > 0;) {
    if (points[i].far <= far_target) return points[i];
  }
  fail(ErrorCode::kInsufficientPairs, "no observed threshold reaches the FAR target");
}

struct ValStats {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation
  std::vector<double> values;
};

// VAL@FAR over k bootstrap resamples (with replacement) of the pair set.
inline ValStats val_at_far_resampled(std::span<const ScoredPair> pairs, double far_target, int k, std::uint64_t seed) {
  if (k < 1) fail(ErrorCode::kSpecError, "resample count must be >= 1");
  SplitMix64 rng(seed);
  ValStats s;
  std::vector<ScoredPair> sample(pairs.size());
  for (int r = 0; r < k; ++r) {
    for (auto& p : sample) p = pairs[rng.below(pairs.size())];
    s.values.push_back(val_at_far(sample, far_target).val);
  }
  s.mean = std::accumulate(s.values.begin(), s.values.end(), 0.0) / k;
  if (k > 1) {
    double v = 0.0;
    for (double x : s.values) v += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(v / (k - 1));
  }
  return s;
}

// F1-maximizing observed threshold; ties go to the smallest threshold.
inline OperatingPoint select_threshold(std::span<const ScoredPair> pairs) {
  const auto points = sweep(pairs);
  OperatingPoint best = points.front();
  for (const auto& p : points) {
    if (p.f1 > best.f1) best = p;
  }
  return best;
}

inline double median(std::vector<double> v) {
  if (v.empty()) fail(ErrorCode::kDataError, "median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

struct DistanceSummary {
  double median_same = 0.0;
  double median_diff = 0.0;
};

inline DistanceSummary distance_summary(std::span<const ScoredPair> pairs) {
  std::vector<double> s, d;
  for (const auto& p : pairs) (p.same ? s : d).push_back(p.distance);
  return {median(s), median(d)};
}

// (p_o - p_e) / (1 - p_e); when p_e = 1 the result is 1 if p_o = 1, else 0.
inline double cohen_kappa(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) fail(ErrorCode::kSpecError, "rater label vectors differ in length");
  if (a.empty()) fail(ErrorCode::kDataError, "no ratings");
  std::map<int, std::size_t> ca, cb;
  std::size_t agree = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ++ca[a[i]];
    ++cb[b[i]];
    agree += a[i] == b[i];
  }
  const double n = static_cast<double>(a.size());
  const double po = agree / n;
  double pe = 0.0;
  for (const auto& [label, count] : ca) {
    auto it = cb.find(label);
    if (it != cb.end()) pe += (count / n) * (it->second / n);
  }
  if (pe >= 1.0) return po >= 1.0 ? 1.0 : 0.0;
  return (po - pe) / (1.0 - pe);
}

}  // namespace muzzle::eval
