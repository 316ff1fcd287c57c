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

#include <gtest/gtest.h>

#include <set>

#include "muzzle/evalkit.hpp"
#include "support/metric_oracle.hpp"

namespace muzzle::eval {
namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected muzzle::Error";
  return ErrorCode::kBadRequest;
}

std::vector<ScoredPair> pairs_of(std::initializer_list<double> same, std::initializer_list<double> diff) {
  std::vector<ScoredPair> out;
  for (double d : same) out.push_back({d, true});
  for (double d : diff) out.push_back({d, false});
  return out;
}

TEST(PairDistances, IdenticalSampleIsZero) {
  nn::Tensor<float> e({2, 2}, std::vector<float>{1, 0, 0, 1});
  const std::vector<Pair> p = {{0, 0, true}, {0, 1, false}};
  const auto s = pair_distances(e, p);
  EXPECT_EQ(s[0].distance, 0.0);
  EXPECT_TRUE(s[0].same);
  EXPECT_DOUBLE_EQ(s[1].distance, 2.0);
  const std::vector<Pair> bad = {{0, 2, true}};
  EXPECT_EQ(code_of([&] { pair_distances(e, bad); }), ErrorCode::kDataError);
}

TEST(ValFarTest, ExtremesAndHandCount) {
  const auto p = pairs_of({0.1, 0.4, 0.7}, {0.2, 0.5, 0.9});
  EXPECT_EQ(val_far(p, 0.0).val, 0.0);
  EXPECT_EQ(val_far(p, 0.0).far, 0.0);
  EXPECT_EQ(val_far(p, 0.9).val, 1.0);
  EXPECT_EQ(val_far(p, 0.9).far, 1.0);
  EXPECT_DOUBLE_EQ(val_far(p, 0.45).val, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(val_far(p, 0.45).far, 1.0 / 3.0);
  EXPECT_EQ(code_of([&] { val_far(pairs_of({0.1}, {}), 0.5); }), ErrorCode::kDataError);
}

TEST(ValFarTest, MonotoneInThreshold) {
  SplitMix64 rng(1);
  const auto p = testing::random_scored_pairs(rng, 200, false);
  ValFar prev{0, 0};
  for (double t = 0; t <= 4.0; t += 0.05) {
    const auto v = val_far(p, t);
    EXPECT_GE(v.val, prev.val);
    EXPECT_GE(v.far, prev.far);
    prev = v;
  }
}

TEST(ValAtFar, SeparatedIsPerfectAndInsufficientPairsDetected) {
  std::vector<ScoredPair> p;
  for (int i = 0; i < 50; ++i) p.push_back({0.01 * i, true});
  for (int i = 0; i < 200; ++i) p.push_back({1.0 + 0.01 * i, false});
  const auto op = val_at_far(p, 0.01);
  EXPECT_EQ(op.val, 1.0);
  EXPECT_LE(op.far, 0.01);
  EXPECT_EQ(code_of([&] { val_at_far(p, 1e-3); }), ErrorCode::kInsufficientPairs);
  EXPECT_EQ(code_of([&] { val_at_far(p, 0.0); }), ErrorCode::kSpecError);
}

TEST(ValAtFar, MatchesBruteForceSweep) {
  SplitMix64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const auto p = testing::random_scored_pairs(rng, 200, trial % 2 == 0);
    const double target = rng.uniform(0.02, 0.4);
    const auto oracle = testing::val_at_far_oracle(p, target);
    ASSERT_TRUE(oracle.has_value());
    const auto op = val_at_far(p, target);
    EXPECT_NEAR(op.threshold, oracle->threshold, 1e-9);
    EXPECT_NEAR(op.val, oracle->val, 1e-9);
    EXPECT_NEAR(op.far, oracle->far, 1e-9);
    EXPECT_LE(val_far(p, op.threshold).far, target);
  }
}

TEST(ValAtFar, ResampledMeanAndStd) {
  SplitMix64 rng(3);
  const auto p = testing::random_scored_pairs(rng, 400, false);
  const auto s = val_at_far_resampled(p, 0.05, 10, 9);
  ASSERT_EQ(s.values.size(), 10u);
  double mean = 0;
  for (double v : s.values) mean += v / 10;
  EXPECT_NEAR(s.mean, mean, 1e-12);
  EXPECT_GT(s.stddev, 0.0);
  EXPECT_EQ(val_at_far_resampled(p, 0.05, 10, 9).values, s.values);
}

TEST(MetricsAtThreshold, KnownCases) {
  const auto perfect = metrics_at_threshold(pairs_of({0.1, 0.2}, {0.8, 0.9}), 0.5);
  EXPECT_EQ(perfect.accuracy, 1.0);
  EXPECT_EQ(perfect.f1, 1.0);
  const auto all_same = metrics_at_threshold(pairs_of({0.1, 0.2}, {0.8, 0.9}), 1.0);
  EXPECT_EQ(all_same.accuracy, 0.5);
  EXPECT_EQ(all_same.tpr, 1.0);
  EXPECT_EQ(all_same.fpr, 1.0);
  // TP 3, FN 1, FP 1, TN 3: precision = recall = 3/4.
  const auto mixed = metrics_at_threshold(pairs_of({0.1, 0.2, 0.5, 0.9}, {0.3, 0.6, 0.8, 1.0}), 0.55);
  EXPECT_EQ(mixed.tp, 3u);
  EXPECT_EQ(mixed.fp, 1u);
  EXPECT_DOUBLE_EQ(mixed.f1, 0.75);
  EXPECT_DOUBLE_EQ(mixed.accuracy, 0.75);
  EXPECT_EQ(code_of([&] { metrics_at_threshold(pairs_of({}, {0.3}), 0.5); }), ErrorCode::kDataError);
}

TEST(MetricsAtThreshold, MatchesIndependentCounts) {
  SplitMix64 rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const auto p = testing::random_scored_pairs(rng, 1 + rng.below(200) + 2, trial % 3 == 0);
    const double t = rng.uniform(0, 4);
    const auto op = metrics_at_threshold(p, t);
    const auto c = testing::count_at(p, t);
    EXPECT_EQ(op.tp + op.fp + op.tn + op.fn, p.size());
    EXPECT_NEAR(op.accuracy, (c.tp + c.tn) / p.size(), 1e-9);
    EXPECT_NEAR(op.f1, testing::f1_of(c), 1e-9);
    EXPECT_NEAR(op.tpr, c.tp / (c.tp + c.fn), 1e-9);
    EXPECT_NEAR(op.fpr, c.fp / (c.fp + c.tn), 1e-9);
  }
}

TEST(SelectThreshold, SeparableTakesSmallestInGap) {
  const auto op = select_threshold(pairs_of({0.1, 0.3, 0.2}, {0.8, 0.9}));
  EXPECT_DOUBLE_EQ(op.threshold, 0.3);
  EXPECT_EQ(op.f1, 1.0);
}

TEST(SelectThreshold, MatchesBruteForceSweep) {
  SplitMix64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const auto p = testing::random_scored_pairs(rng, 200, trial % 2 == 1);
    const auto [t, f1] = testing::select_threshold_oracle(p);
    const auto op = select_threshold(p);
    EXPECT_NEAR(op.threshold, t, 1e-9);
    EXPECT_NEAR(op.f1, f1, 1e-9);
  }
}

TEST(CohenKappa, KnownValues) {
  const std::vector<int> a = {0, 1, 2, 1, 0}, flip_a = {1, 1, 0, 0}, flip_b = {1, 0, 1, 0};
  EXPECT_DOUBLE_EQ(cohen_kappa(a, a), 1.0);
  EXPECT_DOUBLE_EQ(cohen_kappa(flip_a, flip_b), 0.0);
  // 10 ratings, 4 yes-yes, 4 no-no, 1 each disagreement: p_o = 0.8, p_e = 0.5.
  const std::vector<int> r1 = {1, 1, 1, 1, 1, 0, 0, 0, 0, 0}, r2 = {1, 1, 1, 1, 0, 1, 0, 0, 0, 0};
  EXPECT_NEAR(cohen_kappa(r1, r2), 0.6, 1e-12);
  const std::vector<int> c1 = {1, 1, 1}, c0 = {0, 0, 0};
  EXPECT_EQ(cohen_kappa(c1, c1), 1.0);
  EXPECT_EQ(cohen_kappa(c1, c0), 0.0);
  EXPECT_EQ(code_of([&] { cohen_kappa(c1, flip_a); }), ErrorCode::kSpecError);
}

TEST(BalancedPairs, CountsDistinctAndSeeded) {
  std::vector<int> labels;
  for (int id = 0; id < 8; ++id)
    for (int k = 0; k < 12; ++k) labels.push_back(id);
  const auto p = sample_balanced_pairs(labels, 995, 1);
  std::size_t same = 0;
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (const auto& x : p) {
    EXPECT_LT(x.a, x.b);
    EXPECT_EQ(x.same, labels[x.a] == labels[x.b]);
    EXPECT_TRUE(seen.insert({x.a, x.b}).second);
    same += x.same;
  }
  EXPECT_EQ(same, 8u * 66u);
  EXPECT_EQ(p.size(), 2 * same);
  const auto q = sample_balanced_pairs(labels, 100, 1);
  EXPECT_EQ(q.size(), 200u);
  const auto q2 = sample_balanced_pairs(labels, 100, 1);
  for (std::size_t i = 0; i < q.size(); ++i) EXPECT_EQ(q[i].a, q2[i].a);
}

}  // namespace
}  // namespace muzzle::eval
