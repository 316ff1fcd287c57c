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

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "muzzle/error.hpp"
#include "muzzle/nn/network.hpp"

namespace muzzle::nn {

struct AdamConfig {
  double learning_rate = 0.003;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Learning rate is multiplied by decay_factor every decay_interval_epochs.
  double decay_factor = 0.8;
  int decay_interval_epochs = 8;
};

template <typename T>
struct OptimizerState {
  AdamConfig config;
  double learning_rate = 0.003;
  std::int64_t step = 0;
  std::int64_t epochs_completed = 0;
  std::vector<T> first_moment;
  std::vector<T> second_moment;

  static OptimizerState fresh(std::size_t parameter_count, AdamConfig cfg = {}) {
    OptimizerState s;
    s.config = cfg;
    s.learning_rate = cfg.learning_rate;
    s.first_moment.assign(parameter_count, T(0));
    s.second_moment.assign(parameter_count, T(0));
    return s;
  }
};

// Bias-corrected Adam update on a flat parameter buffer.
template <typename T>
void adam_update(std::span<T> params, std::span<const T> grads, OptimizerState<T>& opt) {
  if (grads.size() != params.size() || opt.first_moment.size() != params.size() ||
      opt.second_moment.size() != params.size()) {
    fail(ErrorCode::kSpecError, "adam: gradient/moment shapes do not match parameters (" +
                                    std::to_string(grads.size()) + " vs " +
                                    std::to_string(params.size()) + ")");
  }
  ++opt.step;
  const double b1 = opt.config.beta1, b2 = opt.config.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(opt.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(opt.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    const double m = b1 * opt.first_moment[i] + (1.0 - b1) * g;
    const double v = b2 * opt.second_moment[i] + (1.0 - b2) * g * g;
    opt.first_moment[i] = static_cast<T>(m);
    opt.second_moment[i] = static_cast<T>(v);
    const double mhat = m / c1, vhat = v / c2;
    params[i] = static_cast<T>(params[i] - opt.learning_rate * mhat / (std::sqrt(vhat) + opt.config.epsilon));
  }
}

template <typename T>
void adam_step(Network<T>& net, const ParameterGradients<T>& grads, OptimizerState<T>& opt) {
  adam_update<T>(net.parameters(), grads.values, opt);
}

// Called by the training loop at each epoch boundary.
template <typename T>
void end_epoch(OptimizerState<T>& opt) {
  ++opt.epochs_completed;
  if (opt.config.decay_interval_epochs > 0 &&
      opt.epochs_completed % opt.config.decay_interval_epochs == 0) {
    opt.learning_rate *= opt.config.decay_factor;
  }
}

}  // namespace muzzle::nn
