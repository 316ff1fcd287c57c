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

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "muzzle/error.hpp"

namespace muzzle::nn {

// Conv layers use "same" zero padding (kernel / 2 on each side).
struct Conv2d {
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
};
struct Relu {};
// Non-overlapping window; trailing rows/columns that do not fill a window are dropped.
struct MaxPool {
  int size = 2;
};
struct GlobalAvgPool {};
// in_dim == 0 means "inferred from the previous layer"; a nonzero value is
// checked against the chained shape.
struct Dense {
  int out_dim = 0;
  int in_dim = 0;
};
struct L2Normalize {};

using LayerDesc = std::variant<Conv2d, Relu, MaxPool, GlobalAvgPool, Dense, L2Normalize>;

// Per-sample activation shape. Flat activations (after dense / global pooling)
// carry height = width = 1 and flat = true.
struct ActivationShape {
  int channels = 0;
  int height = 0;
  int width = 0;
  bool flat = false;

  std::size_t size() const {
    return static_cast<std::size_t>(channels) * static_cast<std::size_t>(height) *
           static_cast<std::size_t>(width);
  }
  friend bool operator==(const ActivationShape&, const ActivationShape&) = default;
};

struct NetworkSpec {
  ActivationShape input;
  std::vector<LayerDesc> layers;
  std::uint64_t seed = 0;
};

inline std::string layer_name(const LayerDesc& layer) {
  return std::visit(
      [](const auto& l) -> std::string {
        using L = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<L, Conv2d>) return "conv2d";
        if constexpr (std::is_same_v<L, Relu>) return "relu";
        if constexpr (std::is_same_v<L, MaxPool>) return "maxpool";
        if constexpr (std::is_same_v<L, GlobalAvgPool>) return "global-avg-pool";
        if constexpr (std::is_same_v<L, Dense>) return "dense";
        if constexpr (std::is_same_v<L, L2Normalize>) return "l2-normalize";
      },
      layer);
}

inline nlohmann::json to_json(const LayerDesc& layer) {
  nlohmann::json j;
  j["type"] = layer_name(layer);
  std::visit(
      [&j](const auto& l) {
        using L = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<L, Conv2d>) {
          j["out_channels"] = l.out_channels;
          j["kernel"] = l.kernel;
          j["stride"] = l.stride;
        } else if constexpr (std::is_same_v<L, MaxPool>) {
          j["size"] = l.size;
        } else if constexpr (std::is_same_v<L, Dense>) {
          j["out_dim"] = l.out_dim;
          if (l.in_dim != 0) j["in_dim"] = l.in_dim;
        }
      },
      layer);
  return j;
}

inline LayerDesc layer_from_json(const nlohmann::json& j) {
  try {
    const std::string type = j.at("type").get<std::string>();
    if (type == "conv2d") {
      return Conv2d{j.at("out_channels").get<int>(), j.value("kernel", 3), j.value("stride", 1)};
    }
    if (type == "relu") return Relu{};
    if (type == "maxpool") return MaxPool{j.value("size", 2)};
    if (type == "global-avg-pool") return GlobalAvgPool{};
    if (type == "dense") return Dense{j.at("out_dim").get<int>(), j.value("in_dim", 0)};
    if (type == "l2-normalize") return L2Normalize{};
    fail(ErrorCode::kSpecError, "unknown layer type '" + type + "'");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kSpecError, std::string("malformed layer descriptor: ") + e.what());
  }
}

inline nlohmann::json to_json(const NetworkSpec& spec) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : spec.layers) layers.push_back(to_json(l));
  return {{"input", {spec.input.channels, spec.input.height, spec.input.width}},
          {"layers", layers},
          {"seed", spec.seed}};
}

inline NetworkSpec spec_from_json(const nlohmann::json& j) {
  NetworkSpec spec;
  try {
    const auto& in = j.at("input");
    spec.input = {in.at(0).get<int>(), in.at(1).get<int>(), in.at(2).get<int>(), false};
    for (const auto& l : j.at("layers")) spec.layers.push_back(layer_from_json(l));
    spec.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kSpecError, std::string("malformed network spec: ") + e.what());
  }
  return spec;
}

// Reference embedding backbone: four 3x3 conv stages (16/32/64/128 channels),
// max pooling after the first three, global average pooling, a dense
// projection to `dim` and unit normalization.
inline NetworkSpec small_conv_net(int dim, std::uint64_t seed, int input_size = 96) {
  NetworkSpec spec;
  spec.input = {1, input_size, input_size, false};
  spec.seed = seed;
  spec.layers = {Conv2d{16, 3, 1}, Relu{}, MaxPool{2}, Conv2d{32, 3, 1}, Relu{}, MaxPool{2},
                 Conv2d{64, 3, 1}, Relu{}, MaxPool{2}, Conv2d{128, 3, 1}, Relu{}, GlobalAvgPool{},
                 Dense{dim, 0},    L2Normalize{}};
  return spec;
}

}  // namespace muzzle::nn
