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

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "muzzle/error.hpp"
#include "muzzle/fileio.hpp"
#include "muzzle/nn/adam.hpp"
#include "muzzle/nn/network.hpp"

// Container layout:
//   8 bytes   magic "MZLCKPT1" (last byte is the format version)
//   4 bytes   little-endian manifest length
//   N bytes   UTF-8 JSON manifest
//   rest      little-endian float32 blob: parameters in layer order, then the
//             Adam first and second moments when the manifest says so
namespace muzzle::nn {

inline constexpr std::string_view kCheckpointMagic = "MZLCKPT1";
inline constexpr int kCheckpointVersion = 1;

struct CheckpointMeta {
  std::string role = "embedder";
  int epoch = 0;
  int dim = 0;
  double threshold = 0.0;
  nlohmann::json extra = nlohmann::json::object();
};

struct Checkpoint {
  Network<float> network;
  std::optional<OptimizerState<float>> optimizer;
  CheckpointMeta meta;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint32_t get_u32(std::string_view in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

inline void put_floats(std::string& out, std::span<const float> values) {
  for (float f : values) put_u32(out, std::bit_cast<std::uint32_t>(f));
}

inline std::uint32_t crc32_of(std::string_view bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  constexpr std::size_t kMax = 1u << 30;
  for (std::size_t off = 0; off < bytes.size(); off += kMax) {
    const std::size_t n = std::min(kMax, bytes.size() - off);
    crc = ::crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + off), static_cast<uInt>(n));
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace detail

inline std::string encode_checkpoint(const Network<float>& net, const OptimizerState<float>* opt,
                                     const CheckpointMeta& meta) {
  std::string blob;
  detail::put_floats(blob, net.parameters());
  if (opt) {
    detail::put_floats(blob, opt->first_moment);
    detail::put_floats(blob, opt->second_moment);
  }
  nlohmann::json manifest = {
      {"format_version", kCheckpointVersion},
      {"role", meta.role},
      {"spec", to_json(net.spec())},
      {"dim", meta.dim},
      {"epoch", meta.epoch},
      {"threshold", meta.threshold},
      {"param_count", net.parameter_count()},
      {"blob_bytes", blob.size()},
      {"crc32", detail::crc32_of(blob)},
      {"extra", meta.extra},
  };
  if (opt) {
    manifest["optimizer"] = {
        {"learning_rate", opt->learning_rate},
        {"base_learning_rate", opt->config.learning_rate},
        {"beta1", opt->config.beta1},
        {"beta2", opt->config.beta2},
        {"epsilon", opt->config.epsilon},
        {"decay_factor", opt->config.decay_factor},
        {"decay_interval_epochs", opt->config.decay_interval_epochs},
        {"step", opt->step},
        {"epochs_completed", opt->epochs_completed},
    };
  }
  const std::string text = manifest.dump();
  std::string out(kCheckpointMagic);
  detail::put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  out += blob;
  return out;
}

inline Checkpoint decode_checkpoint(std::string_view bytes) {
  constexpr std::size_t kMagic = 8;
  if (bytes.size() < kMagic || bytes.substr(0, 7) != kCheckpointMagic.substr(0, 7)) {
    fail(ErrorCode::kFormatError, "not a checkpoint (bad magic bytes)");
  }
  if (bytes[7] != kCheckpointMagic[7]) {
    fail(ErrorCode::kVersionMismatch, std::string("checkpoint container version '") + bytes[7] +
                                          "' is not supported (expected '1')");
  }
  if (bytes.size() < kMagic + 4) fail(ErrorCode::kTruncated, "checkpoint ends inside the header");
  const std::size_t mlen = detail::get_u32(bytes, kMagic);
  if (bytes.size() < kMagic + 4 + mlen) fail(ErrorCode::kTruncated, "checkpoint ends inside the manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(kMagic + 4, mlen));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormatError, std::string("checkpoint manifest is not valid JSON: ") + e.what());
  }
  Checkpoint ck{Network<float>(NetworkSpec{{1, 1, 1, false}, {}, 0}), std::nullopt, {}};
  try {
    const int version = manifest.at("format_version").get<int>();
    if (version != kCheckpointVersion) {
      fail(ErrorCode::kVersionMismatch, "checkpoint manifest version " + std::to_string(version) +
                                            " is not supported");
    }
    const std::string_view blob = bytes.substr(kMagic + 4 + mlen);
    const auto blob_bytes = manifest.at("blob_bytes").get<std::size_t>();
    if (blob.size() < blob_bytes) {
      fail(ErrorCode::kTruncated, "parameter blob has " + std::to_string(blob.size()) + " of " +
                                      std::to_string(blob_bytes) + " bytes");
    }
    if (blob.size() > blob_bytes) fail(ErrorCode::kFormatError, "trailing bytes after parameter blob");
    if (detail::crc32_of(blob) != manifest.at("crc32").get<std::uint32_t>()) {
      fail(ErrorCode::kChecksumMismatch, "parameter blob CRC32 does not match manifest");
    }
    const NetworkSpec spec = spec_from_json(manifest.at("spec"));
    const auto count = manifest.at("param_count").get<std::size_t>();
    const bool has_opt = manifest.contains("optimizer");
    if (blob_bytes != count * 4 * (has_opt ? 3 : 1)) {
      fail(ErrorCode::kFormatError, "blob size inconsistent with parameter count");
    }
    auto read_floats = [&](std::size_t first) {
      std::vector<float> v(count);
      for (std::size_t i = 0; i < count; ++i) {
        v[i] = std::bit_cast<float>(detail::get_u32(blob, 4 * (first + i)));
      }
      return v;
    };
    ck.network = Network<float>(spec, read_floats(0));
    if (has_opt) {
      const auto& o = manifest.at("optimizer");
      OptimizerState<float> opt;
      opt.config.learning_rate = o.at("base_learning_rate").get<double>();
      opt.config.beta1 = o.at("beta1").get<double>();
      opt.config.beta2 = o.at("beta2").get<double>();
      opt.config.epsilon = o.at("epsilon").get<double>();
      opt.config.decay_factor = o.at("decay_factor").get<double>();
      opt.config.decay_interval_epochs = o.at("decay_interval_epochs").get<int>();
      opt.learning_rate = o.at("learning_rate").get<double>();
      opt.step = o.at("step").get<std::int64_t>();
      opt.epochs_completed = o.at("epochs_completed").get<std::int64_t>();
      opt.first_moment = read_floats(count);
      opt.second_moment = read_floats(2 * count);
      ck.optimizer = std::move(opt);
    }
    ck.meta.role = manifest.at("role").get<std::string>();
    ck.meta.dim = manifest.at("dim").get<int>();
    ck.meta.epoch = manifest.at("epoch").get<int>();
    ck.meta.threshold = manifest.at("threshold").get<double>();
    ck.meta.extra = manifest.value("extra", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormatError, std::string("checkpoint manifest is missing fields: ") + e.what());
  }
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Network<float>& net,
                            const OptimizerState<float>* opt, const CheckpointMeta& meta) {
  write_file_atomic(path, encode_checkpoint(net, opt, meta));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

}  // namespace muzzle::nn
