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

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "muzzle/detector/detector.hpp"
#include "muzzle/error.hpp"
#include "muzzle/fileio.hpp"
#include "muzzle/trainer.hpp"

// One declarative INI file ("[section]" + "key = value") holding every module
// config. Unknown sections or keys are rejected; Resolved output lists every
// key in registry order, so it round-trips through parse.
namespace muzzle::config {

struct RunConfig {
  std::string run_id = "run";
  std::string runs_dir = "runs";
  std::string dataset;
  std::string scenes;
  train::EmbedderTrainConfig embedder{};
  detect::DetectorTrainConfig detector{};
  detect::DetectorConfig detection{};
  double detector_train_fraction = 0.8;

  std::filesystem::path run_dir() const { return std::filesystem::path(runs_dir) / run_id; }
};

namespace detail {

inline std::string format(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
inline std::string format(bool v) { return v ? "true" : "false"; }
inline std::string format(const std::string& v) { return v; }
template <typename I>
  requires std::is_integral_v<I>
inline std::string format(I v) {
  return std::to_string(v);
}

inline void parse_into(const std::string& key, const std::string& text, std::string& out) { out = text; }

inline void parse_into(const std::string& key, const std::string& text, bool& out) {
  if (text == "true" || text == "1" || text == "yes") {
    out = true;
  } else if (text == "false" || text == "0" || text == "no") {
    out = false;
  } else {
    fail(ErrorCode::kSpecError, "config key " + key + " expects a boolean, got '" + text + "'");
  }
}

inline void parse_into(const std::string& key, const std::string& text, double& out) {
  std::size_t used = 0;
  try {
    out = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size()) fail(ErrorCode::kSpecError, "config key " + key + " expects a number, got '" + text + "'");
}

template <typename I>
  requires std::is_integral_v<I>
inline void parse_into(const std::string& key, const std::string& text, I& out) {
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    fail(ErrorCode::kSpecError, "config key " + key + " expects an integer, got '" + text + "'");
  }
}

}  // namespace detail

struct Field {
  std::string key;  // section.name
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename M>
Field field(std::string key, M member) {
  return {key,
          [key, member](RunConfig& c, const std::string& text) { detail::parse_into(key, text, member(c)); },
          [member](const RunConfig& c) { return detail::format(member(const_cast<RunConfig&>(c))); }};
}

inline const std::vector<Field>& registry() {
  static const std::vector<Field> fields = [] {
    std::vector<Field> f;
    auto add = [&](std::string key, auto member) { f.push_back(field(std::move(key), member)); };
    add("run.id", [](RunConfig& c) -> auto& { return c.run_id; });
    add("run.runs_dir", [](RunConfig& c) -> auto& { return c.runs_dir; });
    add("data.dataset", [](RunConfig& c) -> auto& { return c.dataset; });
    add("data.scenes", [](RunConfig& c) -> auto& { return c.scenes; });

    add("network.dim", [](RunConfig& c) -> auto& { return c.embedder.dim; });
    add("network.seed", [](RunConfig& c) -> auto& { return c.embedder.seed; });

    add("optimizer.learning_rate", [](RunConfig& c) -> auto& { return c.embedder.adam.learning_rate; });
    add("optimizer.beta1", [](RunConfig& c) -> auto& { return c.embedder.adam.beta1; });
    add("optimizer.beta2", [](RunConfig& c) -> auto& { return c.embedder.adam.beta2; });
    add("optimizer.epsilon", [](RunConfig& c) -> auto& { return c.embedder.adam.epsilon; });
    add("optimizer.decay_factor", [](RunConfig& c) -> auto& { return c.embedder.adam.decay_factor; });
    add("optimizer.decay_interval_epochs", [](RunConfig& c) -> auto& { return c.embedder.adam.decay_interval_epochs; });

    add("training.epochs", [](RunConfig& c) -> auto& { return c.embedder.epochs; });
    add("training.mean_loss", [](RunConfig& c) -> auto& { return c.embedder.mean_loss; });
    add("training.augment", [](RunConfig& c) -> auto& { return c.embedder.augment; });
    add("training.far_target", [](RunConfig& c) -> auto& { return c.embedder.far_target; });
    add("training.val_pairs_per_class", [](RunConfig& c) -> auto& { return c.embedder.val_pairs_per_class; });
    add("training.keep_epoch_checkpoints", [](RunConfig& c) -> auto& { return c.embedder.keep_epoch_checkpoints; });

    add("mining.min_triplets", [](RunConfig& c) -> auto& { return c.embedder.mining.min_triplets; });
    add("mining.negatives_per_pair", [](RunConfig& c) -> auto& { return c.embedder.mining.negatives_per_pair; });
    add("mining.batch_size", [](RunConfig& c) -> auto& { return c.embedder.mining.batch_size; });
    add("mining.alpha", [](RunConfig& c) -> auto& { return c.embedder.mining.alpha; });
    add("mining.max_pairs_per_identity", [](RunConfig& c) -> auto& { return c.embedder.mining.max_pairs_per_identity; });
    add("mining.max_triplets_per_epoch", [](RunConfig& c) -> auto& { return c.embedder.mining.max_triplets_per_epoch; });

    add("augment.rotation_deg", [](RunConfig& c) -> auto& { return c.embedder.augmentation.rotation_deg; });
    add("augment.zoom", [](RunConfig& c) -> auto& { return c.embedder.augmentation.zoom; });
    add("augment.crop_fraction", [](RunConfig& c) -> auto& { return c.embedder.augmentation.crop_fraction; });
    add("augment.shear_deg", [](RunConfig& c) -> auto& { return c.embedder.augmentation.shear_deg; });
    add("augment.translation", [](RunConfig& c) -> auto& { return c.embedder.augmentation.translation; });
    add("augment.hflip_probability", [](RunConfig& c) -> auto& { return c.embedder.augmentation.hflip_probability; });
    add("augment.vflip_probability", [](RunConfig& c) -> auto& { return c.embedder.augmentation.vflip_probability; });
    add("augment.blackout_probability", [](RunConfig& c) -> auto& { return c.embedder.augmentation.blackout.probability; });
    add("augment.blackout_min_fraction", [](RunConfig& c) -> auto& { return c.embedder.augmentation.blackout.min_fraction; });
    add("augment.blackout_max_fraction", [](RunConfig& c) -> auto& { return c.embedder.augmentation.blackout.max_fraction; });
    add("augment.salt_pepper_probability", [](RunConfig& c) -> auto& { return c.embedder.augmentation.salt_pepper.probability; });
    add("augment.salt_density", [](RunConfig& c) -> auto& { return c.embedder.augmentation.salt_pepper.salt_density; });
    add("augment.pepper_density", [](RunConfig& c) -> auto& { return c.embedder.augmentation.salt_pepper.pepper_density; });
    add("augment.seed", [](RunConfig& c) -> auto& { return c.embedder.augmentation.seed; });

    add("preprocess.sharpen_k", [](RunConfig& c) -> auto& { return c.embedder.preprocess.sharpen.k; });
    add("preprocess.clahe_grid_x", [](RunConfig& c) -> auto& { return c.embedder.preprocess.clahe.grid_x; });
    add("preprocess.clahe_grid_y", [](RunConfig& c) -> auto& { return c.embedder.preprocess.clahe.grid_y; });
    add("preprocess.clahe_clip_factor", [](RunConfig& c) -> auto& { return c.embedder.preprocess.clahe.clip_factor; });

    add("detector.epochs", [](RunConfig& c) -> auto& { return c.detector.epochs; });
    add("detector.batch_size", [](RunConfig& c) -> auto& { return c.detector.batch_size; });
    add("detector.learning_rate", [](RunConfig& c) -> auto& { return c.detector.adam.learning_rate; });
    add("detector.decay_factor", [](RunConfig& c) -> auto& { return c.detector.adam.decay_factor; });
    add("detector.decay_interval_epochs", [](RunConfig& c) -> auto& { return c.detector.adam.decay_interval_epochs; });
    add("detector.box_weight", [](RunConfig& c) -> auto& { return c.detector.loss.box; });
    add("detector.no_object_weight", [](RunConfig& c) -> auto& { return c.detector.loss.no_object; });
    add("detector.flips", [](RunConfig& c) -> auto& { return c.detector.flips; });
    add("detector.seed", [](RunConfig& c) -> auto& { return c.detector.seed; });
    add("detector.train_fraction", [](RunConfig& c) -> auto& { return c.detector_train_fraction; });
    add("detector.conf_threshold", [](RunConfig& c) -> auto& { return c.detection.conf_threshold; });
    add("detector.nms_iou", [](RunConfig& c) -> auto& { return c.detection.nms_iou; });
    return f;
  }();
  return fields;
}

inline const Field& find_field(const std::string& key) {
  for (const auto& f : registry()) {
    if (f.key == key) return f;
  }
  fail(ErrorCode::kSpecError, "unknown config key '" + key + "'");
}

inline void set_value(RunConfig& c, const std::string& key, const std::string& value) { find_field(key).set(c, value); }

inline std::string get_value(const RunConfig& c, const std::string& key) { return find_field(key).get(c); }

// "section.key=value".
inline void apply_override(RunConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) fail(ErrorCode::kSpecError, "override must be section.key=value, got '" + assignment + "'");
  set_value(c, assignment.substr(0, eq), assignment.substr(eq + 1));
}

inline void apply_ini(RunConfig& c, const std::string& text) {
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    fail(ErrorCode::kFormatError, std::string("config parse error: ") + e.what());
  }
  for (const auto& [section, body] : tree) {
    if (body.empty()) fail(ErrorCode::kSpecError, "config key '" + section + "' must be inside a [section]");
    for (const auto& [name, value] : body) set_value(c, section + "." + name, value.data());
  }
}

inline RunConfig load(const std::filesystem::path& path) {
  RunConfig c;
  apply_ini(c, read_file(path));
  return c;
}

inline std::string resolved_ini(const RunConfig& c) {
  std::string out;
  std::string section;
  for (const auto& f : registry()) {
    const auto dot = f.key.find('.');
    const std::string s = f.key.substr(0, dot);
    if (s != section) {
      if (!section.empty()) out += "\n";
      out += "[" + s + "]\n";
      section = s;
    }
    out += f.key.substr(dot + 1) + " = " + f.get(c) + "\n";
  }
  return out;
}

inline void write_resolved(const RunConfig& c, const std::filesystem::path& dir) {
  write_file_atomic(dir / "config.ini", resolved_ini(c));
}

}  // namespace muzzle::config
