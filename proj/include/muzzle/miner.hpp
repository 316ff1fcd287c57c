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
#include <map>
#include <span>
#include <unordered_set>
#include <vector>

#include "muzzle/embedder.hpp"
#include "muzzle/error.hpp"
#include "muzzle/nn/tensor.hpp"
#include "muzzle/rng.hpp"

namespace muzzle::mine {

using embed::Hardness;

struct MiningConfig {
  int min_triplets = 512;
  int negatives_per_pair = 16;
  int batch_size = 32;
  double alpha = 0.5;
  int max_pairs_per_identity = 0;  // 0: every ordered within-identity pair
  int max_triplets_per_epoch = 0;  // 0: train on every retained triplet

  void validate() const {
    if (batch_size < 1) fail(ErrorCode::kSpecError, "mining batch size must be >= 1");
    if (min_triplets < batch_size) fail(ErrorCode::kSpecError, "min triplet threshold must be >= batch size");
    if (negatives_per_pair < 1) fail(ErrorCode::kSpecError, "negatives per pair must be >= 1");
    if (!(alpha > 0.0)) fail(ErrorCode::kSpecError, "alpha must be > 0");
    if (max_pairs_per_identity < 0 || max_triplets_per_epoch < 0) fail(ErrorCode::kSpecError, "caps must be >= 0");
  }
};

struct MinedTriplet {
  std::size_t anchor, positive, negative;
  double d_p, d_n;
  Hardness hardness;
};

struct MiningStats {
  std::size_t semi_hard = 0;
  std::size_t hard = 0;
  std::size_t scanned = 0;
  std::size_t skipped_identities = 0;  // identities with a single image
  bool exhaustive = false;
};

struct MiningResult {
  std::vector<MinedTriplet> triplets;
  MiningStats stats;
};

// negatives_per_pair <= 0, or at least the negative pool size, scans every
// negative. Retained triplets satisfy d_n - d_p < alpha.
inline MiningResult mine_epoch(const nn::Tensor<float>& embeddings, std::span<const int> labels, double alpha,
                               int negatives_per_pair, int max_pairs_per_identity, std::uint64_t seed) {
  const std::size_t n = labels.size();
  if (embeddings.rank() != 2 || embeddings.dim(0) != n) fail(ErrorCode::kSpecError, "one embedding per label required");
  std::map<int, std::vector<std::size_t>> by_id;
  for (std::size_t i = 0; i < n; ++i) by_id[labels[i]].push_back(i);

  MiningResult res;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  SplitMix64 rng(seed);
  for (const auto& [id, members] : by_id) {
    if (members.size() < 2) {
      ++res.stats.skipped_identities;
      continue;
    }
    std::vector<std::pair<std::size_t, std::size_t>> own;
    for (std::size_t a : members)
      for (std::size_t p : members)
        if (a != p) own.emplace_back(a, p);
    if (max_pairs_per_identity > 0 && own.size() > static_cast<std::size_t>(max_pairs_per_identity)) {
      shuffle(std::span(own), rng);
      own.resize(static_cast<std::size_t>(max_pairs_per_identity));
      std::sort(own.begin(), own.end());
    }
    pairs.insert(pairs.end(), own.begin(), own.end());
  }
  if (by_id.size() < 2 || pairs.empty()) fail(ErrorCode::kDataError, "mining needs two identities and at least one anchor-positive pair");

  std::vector<double> dist(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    dist[i * n + i] = 0.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      dist[i * n + j] = dist[j * n + i] = embed::squared_l2<float>(embeddings.row(i), embeddings.row(j));
    }
  }

  std::vector<std::size_t> pool, picks;
  for (const auto& [a, p] : pairs) {
    pool.clear();
    for (std::size_t j = 0; j < n; ++j)
      if (labels[j] != labels[a]) pool.push_back(j);
    const bool all = negatives_per_pair <= 0 || static_cast<std::size_t>(negatives_per_pair) >= pool.size();
    const std::vector<std::size_t>* negs = &pool;
    if (!all) {
      // Floyd's sampling of k distinct pool positions, then ascending order.
      std::unordered_set<std::size_t> chosen;
      const std::size_t m = pool.size(), k = static_cast<std::size_t>(negatives_per_pair);
      for (std::size_t j = m - k; j < m; ++j) {
        const std::size_t t = rng.below(j + 1);
        chosen.insert(chosen.count(t) ? j : t);
      }
      picks.assign(chosen.begin(), chosen.end());
      std::sort(picks.begin(), picks.end());
      for (auto& x : picks) x = pool[x];
      negs = &picks;
    }
    const double dp = dist[a * n + p];
    for (std::size_t q : *negs) {
      ++res.stats.scanned;
      const double dn = dist[a * n + q];
      const Hardness h = embed::classify_triplet(dp, dn, alpha);
      if (h == Hardness::kEasy) continue;
      (h == Hardness::kHard ? res.stats.hard : res.stats.semi_hard) += 1;
      res.triplets.push_back({a, p, q, dp, dn, h});
    }
  }
  res.stats.exhaustive = negatives_per_pair <= 0 || [&] {
    for (const auto& [id, members] : by_id)
      if (static_cast<std::size_t>(negatives_per_pair) < n - members.size()) return false;
    return true;
  }();
  return res;
}

}  // namespace muzzle::mine
