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
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "muzzle/augment.hpp"
#include "muzzle/dataset.hpp"
#include "muzzle/embedder.hpp"
#include "muzzle/evalkit.hpp"
#include "muzzle/image/preprocess.hpp"
#include "muzzle/miner.hpp"
#include "muzzle/nn/adam.hpp"
#include "muzzle/nn/checkpoint.hpp"
#include "muzzle/nn/network.hpp"
#include "muzzle/parallel.hpp"

namespace muzzle::train {

namespace fs = std::filesystem;
using image::GrayImage;
using nn::Network;

struct EmbedderTrainConfig {
  int dim = 128;
  int epochs = 96;
  std::uint64_t seed = 1;
  nn::AdamConfig adam{};
  mine::MiningConfig mining{};
  bool mean_loss = false;
  bool augment = true;
  augment::AugmentConfig augmentation{};
  image::PreprocessParams preprocess{};
  double far_target = 1e-2;
  std::size_t val_pairs_per_class = 995;
  fs::path run_dir;  // empty: nothing written
  bool keep_epoch_checkpoints = true;
};

struct EpochMiningReport {
  int epoch = 0;
  std::size_t semi_hard = 0, hard = 0, scanned = 0;  // after any widening
  std::size_t base_semi_hard = 0, base_hard = 0;     // at the configured negative count
  int negatives_per_pair = 0;
  bool exhaustive = false;
  bool updated = false;
  std::size_t triplets_used = 0;
};

struct EpochMetrics {
  int epoch = 0;
  double loss = 0.0;  // mean hinge per used triplet
  double val = std::numeric_limits<double>::quiet_NaN();
  double far = std::numeric_limits<double>::quiet_NaN();
  double accuracy = 0.0;
  double f1 = 0.0;
  double threshold = 0.0;
  double seconds = 0.0;
};

struct EmbedderTrainResult {
  Network<float> net;
  nn::OptimizerState<float> opt;
  std::vector<EpochMiningReport> mining;
  std::vector<EpochMetrics> metrics;
  double threshold = 0.0;
  int best_epoch = 0;  // highest validation accuracy, earliest on ties
  double best_accuracy = -1.0;
};

struct PreparedSet {
  std::vector<GrayImage> images;  // preprocessed to the embedder input
  std::vector<int> labels;
  std::vector<std::string> identities;
};

inline PreparedSet prepare(const std::vector<data::LabeledImage>& raw, const image::PreprocessParams& pp) {
  PreparedSet s;
  s.images.resize(raw.size());
  std::map<std::string, int> ids;
  for (const auto& r : raw) {
    auto [it, fresh] = ids.emplace(r.identity, static_cast<int>(ids.size()));
    s.labels.push_back(it->second);
    if (fresh) s.identities.push_back(r.identity);
  }
  parallel_for(static_cast<std::int64_t>(raw.size()),
               [&](std::int64_t i) { s.images[i] = image::preprocess(raw[i].image, pp); });
  return s;
}

inline nn::Tensor<float> embed_all(const Network<float>& net, const std::vector<GrayImage>& images) {
  std::vector<const GrayImage*> ptrs;
  for (const auto& im : images) ptrs.push_back(&im);
  return embed::Embedder(net).embed_matrix(ptrs);
}

struct EvalReport {
  std::size_t same_pairs = 0, diff_pairs = 0;
  std::optional<eval::OperatingPoint> at_far;  // absent when the pair set cannot resolve the target
  eval::OperatingPoint best_f1;
  eval::DistanceSummary distances;
  std::vector<eval::ScoredPair> scored;
};

// Balanced same/different pairs drawn once with a fixed seed.
inline EvalReport evaluate(const Network<float>& net, const PreparedSet& set, double far_target,
                           std::size_t pairs_per_class, std::uint64_t seed) {
  const auto pairs = eval::sample_balanced_pairs(set.labels, pairs_per_class, seed);
  EvalReport r;
  r.scored = eval::pair_distances(embed_all(net, set.images), pairs);
  std::tie(r.same_pairs, r.diff_pairs) = eval::class_counts(r.scored);
  try {
    r.at_far = eval::val_at_far(r.scored, far_target);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kInsufficientPairs) throw;
  }
  r.best_f1 = eval::select_threshold(r.scored);
  r.distances = eval::distance_summary(r.scored);
  return r;
}

inline void write_mining_csv(const fs::path& path, const std::vector<EpochMiningReport>& rows) {
  std::string out = "epoch,semi_hard,hard,scanned,base_semi_hard,base_hard,negatives_per_pair,exhaustive,updated,used\n";
  for (const auto& r : rows) {
    out += std::to_string(r.epoch) + "," + std::to_string(r.semi_hard) + "," + std::to_string(r.hard) + "," +
           std::to_string(r.scanned) + "," + std::to_string(r.base_semi_hard) + "," + std::to_string(r.base_hard) + "," +
           std::to_string(r.negatives_per_pair) + "," + (r.exhaustive ? "1" : "0") + "," + (r.updated ? "1" : "0") +
           "," + std::to_string(r.triplets_used) + "\n";
  }
  write_file_atomic(path, out);
}

// Deterministic columns only; wall-clock times go to write_timing_csv.
inline void write_metrics_csv(const fs::path& path, const std::vector<EpochMetrics>& rows) {
  std::string out = "epoch,loss,val,far,accuracy,f1,threshold\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%.8g,%.8g,%.8g,%.8g,%.8g,%.8g\n", r.epoch, r.loss, r.val, r.far, r.accuracy, r.f1,
                  r.threshold);
    out += buf;
  }
  write_file_atomic(path, out);
}

inline void write_timing_csv(const fs::path& path, const std::vector<EpochMetrics>& rows) {
  std::string out = "epoch,seconds\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%.3f\n", r.epoch, r.seconds);
    out += buf;
  }
  write_file_atomic(path, out);
}

using EpochHook = std::function<void(const EpochMiningReport&, const EpochMetrics&)>;

inline void check_disjoint_identities(const PreparedSet& a, const PreparedSet& b) {
  const std::set<std::string> ids(a.identities.begin(), a.identities.end());
  for (const auto& id : b.identities) {
    if (ids.count(id)) fail(ErrorCode::kDataError, "identity " + id + " is in both training and validation sets");
  }
}

// Per epoch: embed the unaugmented training set, mine (widening negatives until
// the threshold is met or sampling is exhaustive), update on shuffled batches
// of augmented triplets, validate without augmentation, checkpoint.
inline EmbedderTrainResult train_embedder(const PreparedSet& train, const PreparedSet& val, Network<float> net,
                                          nn::OptimizerState<float> opt, const EmbedderTrainConfig& cfg,
                                          const EpochHook& hook = {}) {
  cfg.mining.validate();
  if (cfg.augment) cfg.augmentation.validate();
  check_disjoint_identities(train, val);
  if (opt.first_moment.size() != net.parameter_count()) fail(ErrorCode::kSpecError, "optimizer does not match network");

  EmbedderTrainResult res{std::move(net), std::move(opt), {}, {}, 0.0, 0, -1.0};
  const embed::TripletLossParams loss_params{cfg.mining.alpha, cfg.mean_loss};
  const int in = res.net.input_shape().width;
  const std::size_t dim = static_cast<std::size_t>(res.net.output_shape().channels);
  if (!cfg.run_dir.empty()) {
    fs::create_directories(cfg.run_dir / "checkpoints");
    const auto prior = cfg.run_dir / "checkpoints" / "best.ckpt";
    if (fs::exists(prior)) {
      const auto ck = nn::load_checkpoint(prior);
      res.best_epoch = ck.meta.epoch;
      res.best_accuracy = ck.meta.extra.value("accuracy", -1.0);
    }
  }

  const int start = static_cast<int>(res.opt.epochs_completed);
  for (int epoch = start + 1; epoch <= start + cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::uint64_t es = mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch));
    const auto emb = embed_all(res.net, train.images);

    EpochMiningReport rep;
    rep.epoch = epoch;
    int neg = cfg.mining.negatives_per_pair;
    auto mined = mine::mine_epoch(emb, train.labels, cfg.mining.alpha, neg, cfg.mining.max_pairs_per_identity, es);
    rep.base_semi_hard = mined.stats.semi_hard;
    rep.base_hard = mined.stats.hard;
    while (mined.triplets.size() < static_cast<std::size_t>(cfg.mining.min_triplets) && !mined.stats.exhaustive) {
      neg *= 2;
      mined = mine::mine_epoch(emb, train.labels, cfg.mining.alpha, neg, cfg.mining.max_pairs_per_identity, es);
    }
    rep.semi_hard = mined.stats.semi_hard;
    rep.hard = mined.stats.hard;
    rep.scanned = mined.stats.scanned;
    rep.negatives_per_pair = neg;
    rep.exhaustive = mined.stats.exhaustive;
    rep.updated = mined.triplets.size() >= static_cast<std::size_t>(cfg.mining.min_triplets);

    EpochMetrics m;
    m.epoch = epoch;
    if (rep.updated) {
      SplitMix64 rng(mix_seed(es, 0xa0));
      auto& ts = mined.triplets;
      shuffle(std::span(ts), rng);
      if (cfg.mining.max_triplets_per_epoch > 0 && ts.size() > static_cast<std::size_t>(cfg.mining.max_triplets_per_epoch)) {
        ts.resize(static_cast<std::size_t>(cfg.mining.max_triplets_per_epoch));
      }
      rep.triplets_used = ts.size();
      double loss_sum = 0.0;
      const std::size_t B = static_cast<std::size_t>(cfg.mining.batch_size);
      for (std::size_t lo = 0; lo < ts.size(); lo += B) {
        const std::size_t hi = std::min(ts.size(), lo + B);
        std::vector<GrayImage> imgs;
        imgs.reserve(3 * (hi - lo));
        for (std::size_t k = lo; k < hi; ++k) {
          std::array<GrayImage, 3> t = {train.images[ts[k].anchor], train.images[ts[k].positive], train.images[ts[k].negative]};
          if (cfg.augment) t = augment::augment_triplet(t, cfg.augmentation, rng);
          for (auto& im : t) imgs.push_back(std::move(im));
        }
        std::vector<const GrayImage*> ptrs;
        for (const auto& im : imgs) ptrs.push_back(&im);
        const auto tr = res.net.trace(embed::to_input_batch(ptrs, in));
        std::vector<embed::TripletIndex> idx;
        for (std::size_t k = 0; k < hi - lo; ++k) idx.push_back({3 * k, 3 * k + 1, 3 * k + 2});
        auto lo_out = embed::triplet_loss<float>(tr.output, idx, loss_params);
        if (!std::isfinite(lo_out.loss)) fail(ErrorCode::kNumericError, "non-finite triplet loss at epoch " + std::to_string(epoch));
        loss_sum += cfg.mean_loss ? lo_out.loss * static_cast<double>(hi - lo) : lo_out.loss;
        if (lo_out.active == 0) continue;
        const auto bw = res.net.backward(tr, lo_out.gradient);
        nn::adam_step(res.net, bw.gradients, res.opt);
      }
      m.loss = loss_sum / static_cast<double>(ts.size());
    }
    nn::end_epoch(res.opt);

    const auto ev = evaluate(res.net, val, cfg.far_target, cfg.val_pairs_per_class, mix_seed(cfg.seed, 0x7a1));
    if (ev.at_far) {
      m.val = ev.at_far->val;
      m.far = ev.at_far->far;
    }
    m.accuracy = ev.best_f1.accuracy;
    m.f1 = ev.best_f1.f1;
    m.threshold = ev.best_f1.threshold;
    res.threshold = m.threshold;
    m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.mining.push_back(rep);
    res.metrics.push_back(m);
    const bool best = m.accuracy > res.best_accuracy;
    if (best) {
      res.best_epoch = epoch;
      res.best_accuracy = m.accuracy;
    }

    if (!cfg.run_dir.empty()) {
      nn::CheckpointMeta meta;
      meta.role = "embedder";
      meta.epoch = epoch;
      meta.dim = static_cast<int>(dim);
      meta.threshold = res.threshold;
      meta.extra = {{"alpha", cfg.mining.alpha}, {"val", m.val}, {"accuracy", m.accuracy}};
      const std::string bytes = nn::encode_checkpoint(res.net, &res.opt, meta);
      if (cfg.keep_epoch_checkpoints) {
        char name[32];
        std::snprintf(name, sizeof name, "epoch-%03d.ckpt", epoch);
        write_file_atomic(cfg.run_dir / "checkpoints" / name, bytes);
      }
      write_file_atomic(cfg.run_dir / "checkpoints" / "last.ckpt", bytes);
      if (best) write_file_atomic(cfg.run_dir / "checkpoints" / "best.ckpt", bytes);
      write_mining_csv(cfg.run_dir / "mining.csv", res.mining);
      write_metrics_csv(cfg.run_dir / "metrics.csv", res.metrics);
      write_timing_csv(cfg.run_dir / "timing.csv", res.metrics);
    }
    if (hook) hook(rep, m);
  }
  return res;
}

inline EmbedderTrainResult train_embedder(const PreparedSet& train, const PreparedSet& val, const EmbedderTrainConfig& cfg,
                                          const EpochHook& hook = {}) {
  Network<float> net(nn::small_conv_net(cfg.dim, cfg.seed, cfg.preprocess.output_size));
  auto opt = nn::OptimizerState<float>::fresh(net.parameter_count(), cfg.adam);
  return train_embedder(train, val, std::move(net), std::move(opt), cfg, hook);
}

}  // namespace muzzle::train
