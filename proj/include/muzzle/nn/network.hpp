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

// Eigen is used purely as a single-threaded GEMM backend; batch-level
// parallelism is handled here so that reductions keep a fixed order.
#ifndef EIGEN_DONT_PARALLELIZE
#define EIGEN_DONT_PARALLELIZE
#endif

#include <Eigen/Core>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "muzzle/error.hpp"
#include "muzzle/nn/spec.hpp"
#include "muzzle/nn/tensor.hpp"
#include "muzzle/rng.hpp"

namespace muzzle::nn {

struct LayerPlan {
  LayerDesc desc;
  ActivationShape in;
  ActivationShape out;
  std::size_t weight_offset = 0;
  std::size_t weight_count = 0;
  std::size_t bias_offset = 0;
  std::size_t bias_count = 0;
  std::size_t fan_in = 0;
};

namespace detail {

inline std::string where(std::size_t index, const LayerDesc& desc) {
  return "layer " + std::to_string(index) + " (" + layer_name(desc) + ")";
}

}  // namespace detail

// Validates the shape chain and lays out parameters contiguously in layer
// order (weights then bias for every parametric layer).
inline std::vector<LayerPlan> plan_layers(const NetworkSpec& spec) {
  if (spec.input.channels <= 0 || spec.input.height <= 0 || spec.input.width <= 0) {
    fail(ErrorCode::kSpecError, "input shape must be positive");
  }
  std::vector<LayerPlan> plan;
  ActivationShape cur = spec.input;
  std::size_t offset = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerDesc& desc = spec.layers[i];
    LayerPlan p{desc, cur, cur};
    const std::string at = detail::where(i, desc);
    if (const auto* conv = std::get_if<Conv2d>(&desc)) {
      if (cur.flat) fail(ErrorCode::kSpecError, at + ": needs a spatial input, got a flat vector");
      if (conv->out_channels <= 0 || conv->kernel <= 0 || conv->kernel % 2 == 0 || conv->stride <= 0) {
        fail(ErrorCode::kSpecError, at + ": out_channels > 0, odd kernel and stride >= 1 required");
      }
      const int pad = conv->kernel / 2;
      const int ho = (cur.height + 2 * pad - conv->kernel) / conv->stride + 1;
      const int wo = (cur.width + 2 * pad - conv->kernel) / conv->stride + 1;
      p.out = {conv->out_channels, ho, wo, false};
      p.fan_in = static_cast<std::size_t>(cur.channels) * conv->kernel * conv->kernel;
      p.weight_count = static_cast<std::size_t>(conv->out_channels) * p.fan_in;
      p.bias_count = static_cast<std::size_t>(conv->out_channels);
    } else if (const auto* pool = std::get_if<MaxPool>(&desc)) {
      if (cur.flat) fail(ErrorCode::kSpecError, at + ": needs a spatial input, got a flat vector");
      if (pool->size <= 0 || cur.height / pool->size < 1 || cur.width / pool->size < 1) {
        fail(ErrorCode::kSpecError, at + ": window " + std::to_string(pool->size) +
                                        " does not fit input " + std::to_string(cur.height) + "x" +
                                        std::to_string(cur.width));
      }
      p.out = {cur.channels, cur.height / pool->size, cur.width / pool->size, false};
    } else if (std::holds_alternative<GlobalAvgPool>(desc)) {
      if (cur.flat) fail(ErrorCode::kSpecError, at + ": needs a spatial input, got a flat vector");
      p.out = {cur.channels, 1, 1, true};
    } else if (const auto* dense = std::get_if<Dense>(&desc)) {
      const auto n = static_cast<int>(cur.size());
      if (dense->out_dim <= 0) fail(ErrorCode::kSpecError, at + ": out_dim must be positive");
      if (dense->in_dim != 0 && dense->in_dim != n) {
        fail(ErrorCode::kSpecError, at + ": declared in_dim " + std::to_string(dense->in_dim) +
                                        " but previous layer produces " + std::to_string(n));
      }
      p.out = {dense->out_dim, 1, 1, true};
      p.fan_in = static_cast<std::size_t>(n);
      p.weight_count = static_cast<std::size_t>(dense->out_dim) * p.fan_in;
      p.bias_count = static_cast<std::size_t>(dense->out_dim);
    }
    p.weight_offset = offset;
    offset += p.weight_count;
    p.bias_offset = offset;
    offset += p.bias_count;
    plan.push_back(p);
    cur = p.out;
  }
  return plan;
}

template <typename T>
struct ParameterGradients {
  std::vector<T> values;
};

template <typename T>
struct SampleTrace {
  std::vector<std::vector<T>> activations;  // layer inputs, plus the final output
  std::vector<std::vector<std::uint32_t>> argmax;
  std::vector<T> norms;
};

template <typename T>
struct ForwardTrace {
  std::vector<SampleTrace<T>> samples;
  Tensor<T> output;
};

template <typename T>
struct BackwardResult {
  ParameterGradients<T> gradients;
  Tensor<T> input_gradient;  // empty unless requested
};

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
void im2col(const T* in, const ActivationShape& s, const Conv2d& c, const ActivationShape& o,
            std::vector<T>& col) {
  const int k = c.kernel, pad = k / 2, hw = o.height * o.width;
  col.assign(static_cast<std::size_t>(s.channels) * k * k * hw, T(0));
  for (int ch = 0; ch < s.channels; ++ch) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* dst = col.data() + static_cast<std::size_t>((ch * k + ky) * k + kx) * hw;
        for (int oy = 0; oy < o.height; ++oy) {
          const int iy = oy * c.stride + ky - pad;
          if (iy < 0 || iy >= s.height) continue;
          const T* src = in + (static_cast<std::size_t>(ch) * s.height + iy) * s.width;
          for (int ox = 0; ox < o.width; ++ox) {
            const int ix = ox * c.stride + kx - pad;
            if (ix >= 0 && ix < s.width) dst[oy * o.width + ox] = src[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ActivationShape& s, const Conv2d& c, const ActivationShape& o,
                T* din) {
  const int k = c.kernel, pad = k / 2, hw = o.height * o.width;
  for (int ch = 0; ch < s.channels; ++ch) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* srcrow = col + static_cast<std::size_t>((ch * k + ky) * k + kx) * hw;
        for (int oy = 0; oy < o.height; ++oy) {
          const int iy = oy * c.stride + ky - pad;
          if (iy < 0 || iy >= s.height) continue;
          T* dst = din + (static_cast<std::size_t>(ch) * s.height + iy) * s.width;
          for (int ox = 0; ox < o.width; ++ox) {
            const int ix = ox * c.stride + kx - pad;
            if (ix >= 0 && ix < s.width) dst[ix] += srcrow[oy * o.width + ox];
          }
        }
      }
    }
  }
}

inline bool is_pointwise(const Conv2d& c) { return c.kernel == 1 && c.stride == 1; }

}  // namespace detail

// Copyable wrapper so that networks stay value types.
class WarningCounter {
 public:
  WarningCounter() = default;
  WarningCounter(const WarningCounter& other) : value_(other.value_.load()) {}
  WarningCounter& operator=(const WarningCounter& other) {
    value_.store(other.value_.load());
    return *this;
  }
  void bump() const { value_.fetch_add(1, std::memory_order_relaxed); }
  std::size_t value() const { return value_.load(); }

 private:
  mutable std::atomic<std::size_t> value_{0};
};

template <typename T>
class Network {
 public:
  explicit Network(NetworkSpec spec) : spec_(std::move(spec)), plan_(plan_layers(spec_)) {
    params_.assign(plan_.empty() ? 0 : plan_.back().bias_offset + plan_.back().bias_count, T(0));
    // He-normal weights, zero biases, drawn in parameter order.
    SplitMix64 rng(spec_.seed);
    for (const auto& p : plan_) {
      if (p.weight_count == 0) continue;
      const double stddev = std::sqrt(2.0 / static_cast<double>(p.fan_in));
      for (std::size_t i = 0; i < p.weight_count; ++i) {
        params_[p.weight_offset + i] = static_cast<T>(rng.normal() * stddev);
      }
    }
  }

  Network(NetworkSpec spec, std::vector<T> parameters) : spec_(std::move(spec)), plan_(plan_layers(spec_)) {
    const std::size_t expected = plan_.empty() ? 0 : plan_.back().bias_offset + plan_.back().bias_count;
    if (parameters.size() != expected) {
      fail(ErrorCode::kSpecError, "parameter blob has " + std::to_string(parameters.size()) +
                                      " values, spec needs " + std::to_string(expected));
    }
    params_ = std::move(parameters);
  }

  const NetworkSpec& spec() const { return spec_; }
  const std::vector<LayerPlan>& plan() const { return plan_; }
  ActivationShape input_shape() const { return spec_.input; }
  ActivationShape output_shape() const { return plan_.empty() ? spec_.input : plan_.back().out; }
  std::size_t parameter_count() const { return params_.size(); }
  std::span<const T> parameters() const { return params_; }
  std::span<T> parameters() { return params_; }
  std::size_t zero_norm_warnings() const { return zero_norms_.value(); }

  template <typename U>
  Network<U> cast() const {
    return Network<U>(spec_, std::vector<U>(params_.begin(), params_.end()));
  }

  Tensor<T> forward(const Tensor<T>& batch) const {
    const std::size_t n = check_batch(batch);
    Tensor<T> out(output_tensor_shape(n));
    const std::size_t out_size = output_shape().size();
    for_each_sample(n, [&](std::size_t b) {
      forward_sample(batch.row(b), nullptr, std::span<T>(out.values()).subspan(b * out_size, out_size));
    });
    return out;
  }

  ForwardTrace<T> trace(const Tensor<T>& batch) const {
    const std::size_t n = check_batch(batch);
    ForwardTrace<T> tr;
    tr.samples.resize(n);
    tr.output = Tensor<T>(output_tensor_shape(n));
    const std::size_t out_size = output_shape().size();
    for_each_sample(n, [&](std::size_t b) {
      forward_sample(batch.row(b), &tr.samples[b],
                     std::span<T>(tr.output.values()).subspan(b * out_size, out_size));
    });
    return tr;
  }

  // Gradient of sum(output_grad * output) with respect to every parameter
  // (and optionally the input). Samples are reduced in fixed chunks so the
  // result does not depend on the thread count.
  BackwardResult<T> backward(const ForwardTrace<T>& tr, const Tensor<T>& output_grad,
                             bool want_input_gradient = false) const {
    const std::size_t n = tr.samples.size();
    const std::size_t out_size = output_shape().size();
    if (output_grad.size() != n * out_size) {
      fail(ErrorCode::kSpecError, "output gradient has " + std::to_string(output_grad.size()) +
                                      " values, expected " + std::to_string(n * out_size));
    }
    BackwardResult<T> result;
    const std::size_t in_size = spec_.input.size();
    if (want_input_gradient) result.input_gradient = Tensor<T>({n, in_size});
    constexpr std::size_t kChunk = 8;
    const std::size_t chunks = (n + kChunk - 1) / kChunk;
    std::vector<std::vector<T>> partial(chunks, std::vector<T>(params_.size(), T(0)));
    std::exception_ptr error;
    std::mutex error_mu;
#pragma omp parallel for schedule(dynamic, 1)
    for (std::int64_t c = 0; c < static_cast<std::int64_t>(chunks); ++c) {
      try {
        const std::size_t lo = static_cast<std::size_t>(c) * kChunk;
        const std::size_t hi = std::min(n, lo + kChunk);
        for (std::size_t b = lo; b < hi; ++b) {
          std::span<T> din;
          if (want_input_gradient) din = result.input_gradient.row(b);
          backward_sample(tr.samples[b], output_grad.data().subspan(b * out_size, out_size),
                          partial[static_cast<std::size_t>(c)], din);
        }
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!error) error = std::current_exception();
      }
    }
    if (error) std::rethrow_exception(error);
    result.gradients.values.assign(params_.size(), T(0));
    for (const auto& part : partial) {
      for (std::size_t i = 0; i < part.size(); ++i) result.gradients.values[i] += part[i];
    }
    return result;
  }

  ParameterGradients<T> forward_backward(const Tensor<T>& batch, const Tensor<T>& loss_grad) const {
    return backward(trace(batch), loss_grad).gradients;
  }

 private:
  std::vector<std::size_t> output_tensor_shape(std::size_t n) const {
    const ActivationShape o = output_shape();
    if (o.flat) return {n, static_cast<std::size_t>(o.channels)};
    return {n, static_cast<std::size_t>(o.channels), static_cast<std::size_t>(o.height),
            static_cast<std::size_t>(o.width)};
  }

  std::size_t check_batch(const Tensor<T>& batch) const {
    if (batch.rank() < 2 || batch.dim(0) == 0 || batch.row_size() != spec_.input.size()) {
      fail(ErrorCode::kSpecError, "batch shape does not match network input " +
                                      std::to_string(spec_.input.channels) + "x" +
                                      std::to_string(spec_.input.height) + "x" +
                                      std::to_string(spec_.input.width));
    }
    return batch.dim(0);
  }

  template <typename F>
  static void for_each_sample(std::size_t n, F&& fn) {
    std::exception_ptr error;
    std::mutex error_mu;
#pragma omp parallel for schedule(dynamic, 1)
    for (std::int64_t b = 0; b < static_cast<std::int64_t>(n); ++b) {
      try {
        fn(static_cast<std::size_t>(b));
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!error) error = std::current_exception();
      }
    }
    if (error) std::rethrow_exception(error);
  }

  void forward_sample(std::span<const T> input, SampleTrace<T>* tr, std::span<T> output) const {
    using detail::RowMat;
    using detail::Vec;
    std::vector<T> cur(input.begin(), input.end());
    std::vector<T> next;
    std::vector<T> col;
    if (tr) {
      tr->activations.assign(plan_.size() + 1, {});
      tr->argmax.assign(plan_.size(), {});
      tr->norms.assign(plan_.size(), T(0));
    }
    for (std::size_t li = 0; li < plan_.size(); ++li) {
      const LayerPlan& p = plan_[li];
      next.assign(p.out.size(), T(0));
      if (const auto* conv = std::get_if<Conv2d>(&p.desc)) {
        const Eigen::Index k = static_cast<Eigen::Index>(p.fan_in);
        const Eigen::Index hw = p.out.height * p.out.width;
        const T* colp = cur.data();
        if (!detail::is_pointwise(*conv)) {
          detail::im2col(cur.data(), p.in, *conv, p.out, col);
          colp = col.data();
        }
        Eigen::Map<const RowMat<T>> w(params_.data() + p.weight_offset, conv->out_channels, k);
        Eigen::Map<const Vec<T>> bias(params_.data() + p.bias_offset, conv->out_channels);
        Eigen::Map<const RowMat<T>> cm(colp, k, hw);
        Eigen::Map<RowMat<T>> om(next.data(), conv->out_channels, hw);
        om.noalias() = w * cm;
        om.colwise() += bias;
      } else if (std::holds_alternative<Relu>(p.desc)) {
        for (std::size_t i = 0; i < cur.size(); ++i) next[i] = cur[i] > T(0) ? cur[i] : T(0);
      } else if (const auto* pool = std::get_if<MaxPool>(&p.desc)) {
        std::vector<std::uint32_t>* arg = tr ? &tr->argmax[li] : nullptr;
        if (arg) arg->assign(next.size(), 0);
        const int s = pool->size;
        for (int c = 0; c < p.out.channels; ++c) {
          for (int oy = 0; oy < p.out.height; ++oy) {
            for (int ox = 0; ox < p.out.width; ++ox) {
              std::size_t best = (static_cast<std::size_t>(c) * p.in.height + oy * s) * p.in.width + ox * s;
              for (int dy = 0; dy < s; ++dy) {
                for (int dx = 0; dx < s; ++dx) {
                  const std::size_t idx =
                      (static_cast<std::size_t>(c) * p.in.height + oy * s + dy) * p.in.width + ox * s + dx;
                  if (cur[idx] > cur[best]) best = idx;
                }
              }
              const std::size_t o = (static_cast<std::size_t>(c) * p.out.height + oy) * p.out.width + ox;
              next[o] = cur[best];
              if (arg) (*arg)[o] = static_cast<std::uint32_t>(best);
            }
          }
        }
      } else if (std::holds_alternative<GlobalAvgPool>(p.desc)) {
        const std::size_t hw = static_cast<std::size_t>(p.in.height) * p.in.width;
        for (int c = 0; c < p.in.channels; ++c) {
          T acc = T(0);
          for (std::size_t i = 0; i < hw; ++i) acc += cur[c * hw + i];
          next[c] = acc / static_cast<T>(hw);
        }
      } else if (const auto* dense = std::get_if<Dense>(&p.desc)) {
        Eigen::Map<const RowMat<T>> w(params_.data() + p.weight_offset, dense->out_dim,
                                      static_cast<Eigen::Index>(p.fan_in));
        Eigen::Map<const Vec<T>> bias(params_.data() + p.bias_offset, dense->out_dim);
        Eigen::Map<const Vec<T>> x(cur.data(), static_cast<Eigen::Index>(p.fan_in));
        Eigen::Map<Vec<T>> y(next.data(), dense->out_dim);
        y.noalias() = w * x;
        y += bias;
      } else if (std::holds_alternative<L2Normalize>(p.desc)) {
        T sq = T(0);
        for (T v : cur) sq += v * v;
        const T norm = std::sqrt(sq);
        if (norm > T(0)) {
          for (std::size_t i = 0; i < cur.size(); ++i) next[i] = cur[i] / norm;
        } else {
          next[0] = T(1);
          zero_norms_.bump();
        }
        if (tr) tr->norms[li] = norm;
      }
      for (T v : next) {
        if (!std::isfinite(v)) {
          fail(ErrorCode::kNumericError, "non-finite activation at " + detail::where(li, p.desc));
        }
      }
      if (tr) tr->activations[li] = std::move(cur);
      cur.swap(next);
    }
    std::copy(cur.begin(), cur.end(), output.begin());
    if (tr) tr->activations[plan_.size()] = std::move(cur);
  }

  void backward_sample(const SampleTrace<T>& tr, std::span<const T> out_grad, std::vector<T>& grads,
                       std::span<T> input_grad) const {
    using detail::RowMat;
    using detail::Vec;
    std::vector<T> dout(out_grad.begin(), out_grad.end());
    std::vector<T> din;
    std::vector<T> col;
    std::vector<T> dcol;
    for (std::size_t li = plan_.size(); li-- > 0;) {
      const LayerPlan& p = plan_[li];
      const std::vector<T>& in = tr.activations[li];
      const bool need_din = li > 0 || !input_grad.empty();
      din.assign(need_din ? p.in.size() : 0, T(0));
      if (const auto* conv = std::get_if<Conv2d>(&p.desc)) {
        const Eigen::Index k = static_cast<Eigen::Index>(p.fan_in);
        const Eigen::Index hw = p.out.height * p.out.width;
        const bool pointwise = detail::is_pointwise(*conv);
        const T* colp = in.data();
        if (!pointwise) {
          detail::im2col(in.data(), p.in, *conv, p.out, col);
          colp = col.data();
        }
        Eigen::Map<const RowMat<T>> dom(dout.data(), conv->out_channels, hw);
        Eigen::Map<const RowMat<T>> cm(colp, k, hw);
        Eigen::Map<RowMat<T>> dw(grads.data() + p.weight_offset, conv->out_channels, k);
        Eigen::Map<Vec<T>> db(grads.data() + p.bias_offset, conv->out_channels);
        dw.noalias() += dom * cm.transpose();
        // Fixed summation order, independent of buffer alignment.
        for (Eigen::Index o = 0; o < conv->out_channels; ++o) {
          const T* row = dout.data() + o * hw;
          T acc = T(0);
          for (Eigen::Index i = 0; i < hw; ++i) acc += row[i];
          db[o] += acc;
        }
        if (need_din) {
          Eigen::Map<const RowMat<T>> w(params_.data() + p.weight_offset, conv->out_channels, k);
          if (pointwise) {
            Eigen::Map<RowMat<T>> dim(din.data(), k, hw);
            dim.noalias() = w.transpose() * dom;
          } else {
            dcol.resize(static_cast<std::size_t>(k * hw));
            Eigen::Map<RowMat<T>> dcm(dcol.data(), k, hw);
            dcm.noalias() = w.transpose() * dom;
            detail::col2im_add(dcol.data(), p.in, *conv, p.out, din.data());
          }
        }
      } else if (std::holds_alternative<Relu>(p.desc)) {
        if (need_din) {
          for (std::size_t i = 0; i < in.size(); ++i) din[i] = in[i] > T(0) ? dout[i] : T(0);
        }
      } else if (std::holds_alternative<MaxPool>(p.desc)) {
        if (need_din) {
          const auto& arg = tr.argmax[li];
          for (std::size_t o = 0; o < arg.size(); ++o) din[arg[o]] += dout[o];
        }
      } else if (std::holds_alternative<GlobalAvgPool>(p.desc)) {
        if (need_din) {
          const std::size_t hw = static_cast<std::size_t>(p.in.height) * p.in.width;
          for (int c = 0; c < p.in.channels; ++c) {
            const T g = dout[c] / static_cast<T>(hw);
            for (std::size_t i = 0; i < hw; ++i) din[c * hw + i] = g;
          }
        }
      } else if (const auto* dense = std::get_if<Dense>(&p.desc)) {
        const auto n_in = static_cast<Eigen::Index>(p.fan_in);
        Eigen::Map<const Vec<T>> dy(dout.data(), dense->out_dim);
        Eigen::Map<const Vec<T>> x(in.data(), n_in);
        Eigen::Map<RowMat<T>> dw(grads.data() + p.weight_offset, dense->out_dim, n_in);
        Eigen::Map<Vec<T>> db(grads.data() + p.bias_offset, dense->out_dim);
        dw.noalias() += dy * x.transpose();
        db += dy;
        if (need_din) {
          Eigen::Map<const RowMat<T>> w(params_.data() + p.weight_offset, dense->out_dim, n_in);
          Eigen::Map<Vec<T>> dx(din.data(), n_in);
          dx.noalias() = w.transpose() * dy;
        }
      } else if (std::holds_alternative<L2Normalize>(p.desc)) {
        const T norm = tr.norms[li];
        // Zero input maps to a constant basis vector: gradient is zero.
        if (need_din && norm > T(0)) {
          const std::vector<T>& y = tr.activations[li + 1];
          T dot = T(0);
          for (std::size_t i = 0; i < y.size(); ++i) dot += y[i] * dout[i];
          for (std::size_t i = 0; i < y.size(); ++i) din[i] = (dout[i] - y[i] * dot) / norm;
        }
      }
      if (!need_din) break;
      dout.swap(din);
    }
    if (!input_grad.empty()) std::copy(dout.begin(), dout.end(), input_grad.begin());
  }

  NetworkSpec spec_;
  std::vector<LayerPlan> plan_;
  std::vector<T> params_;
  WarningCounter zero_norms_;
};

}  // namespace muzzle::nn
