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
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "muzzle/error.hpp"
#include "muzzle/fileio.hpp"
#include "muzzle/image/codec.hpp"

namespace muzzle::data {

namespace fs = std::filesystem;
using nlohmann::json;

struct IdentityEntry {
  std::string id;
  std::uint64_t seed = 0;
  std::vector<std::string> files;  // relative to the dataset root
  std::vector<std::uint64_t> variation_seeds;
};

struct DatasetManifest {
  std::uint64_t master_seed = 0;
  std::map<std::string, std::vector<IdentityEntry>> splits;

  std::size_t identity_count() const {
    std::size_t n = 0;
    for (const auto& [_, ids] : splits) n += ids.size();
    return n;
  }
};

inline json to_json(const DatasetManifest& m) {
  json splits = json::object();
  for (const auto& [name, ids] : m.splits) {
    json arr = json::array();
    for (const auto& e : ids) {
      arr.push_back({{"id", e.id}, {"seed", e.seed}, {"files", e.files}, {"variation_seeds", e.variation_seeds}});
    }
    splits[name] = std::move(arr);
  }
  return {{"version", 1}, {"master_seed", m.master_seed}, {"splits", std::move(splits)}};
}

inline DatasetManifest manifest_from_json(const json& j) {
  try {
    if (j.at("version").get<int>() != 1) fail(ErrorCode::kVersionMismatch, "unsupported manifest version");
    DatasetManifest m;
    m.master_seed = j.value("master_seed", std::uint64_t{0});
    for (const auto& [name, arr] : j.at("splits").items()) {
      auto& ids = m.splits[name];
      for (const auto& e : arr) {
        IdentityEntry id;
        id.id = e.at("id").get<std::string>();
        id.seed = e.value("seed", std::uint64_t{0});
        id.files = e.at("files").get<std::vector<std::string>>();
        id.variation_seeds = e.value("variation_seeds", std::vector<std::uint64_t>{});
        ids.push_back(std::move(id));
      }
    }
    return m;
  } catch (const json::exception& e) {
    fail(ErrorCode::kFormatError, std::string("malformed dataset manifest: ") + e.what());
  }
}

// Throws DataError when an identity appears in more than one split.
inline void check_disjoint(const DatasetManifest& m) {
  std::map<std::string, std::string> owner;
  for (const auto& [name, ids] : m.splits) {
    for (const auto& e : ids) {
      auto [it, fresh] = owner.emplace(e.id, name);
      if (!fresh) fail(ErrorCode::kDataError, "identity " + e.id + " appears in splits " + it->second + " and " + name);
    }
  }
}

inline std::string manifest_bytes(const DatasetManifest& m) { return to_json(m).dump(2) + "\n"; }

inline void save_manifest(const fs::path& root, const DatasetManifest& m) {
  write_file_atomic(root / "manifest.json", manifest_bytes(m));
}

inline DatasetManifest load_manifest(const fs::path& root) {
  const std::string text = read_file(root / "manifest.json");
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) fail(ErrorCode::kFormatError, "manifest.json is not valid JSON");
  return manifest_from_json(j);
}

// Builds a manifest from <root>/<split>/<identity>/<image> when no manifest.json exists.
inline DatasetManifest manifest_from_tree(const fs::path& root) {
  if (!fs::is_directory(root)) fail(ErrorCode::kIoError, "dataset root not found: " + root.string());
  DatasetManifest m;
  for (const auto& split : fs::directory_iterator(root)) {
    if (!split.is_directory()) continue;
    std::vector<IdentityEntry> ids;
    for (const auto& ident : fs::directory_iterator(split.path())) {
      if (!ident.is_directory()) continue;
      IdentityEntry e;
      e.id = ident.path().filename().string();
      for (const auto& f : fs::directory_iterator(ident.path())) {
        auto ext = f.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
        if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") {
          e.files.push_back(fs::relative(f.path(), root).generic_string());
        }
      }
      std::sort(e.files.begin(), e.files.end());
      if (!e.files.empty()) ids.push_back(std::move(e));
    }
    std::sort(ids.begin(), ids.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    if (!ids.empty()) m.splits[split.path().filename().string()] = std::move(ids);
  }
  return m;
}

inline DatasetManifest open_dataset(const fs::path& root) {
  DatasetManifest m = fs::exists(root / "manifest.json") ? load_manifest(root) : manifest_from_tree(root);
  check_disjoint(m);
  return m;
}

struct DatasetStats {
  std::size_t identities = 0;
  std::size_t images = 0;
  double cv_percent = 0.0;
};

// Population standard deviation over mean, in percent.
inline double coefficient_of_variation_percent(std::span<const std::size_t> counts) {
  if (counts.empty()) fail(ErrorCode::kEmptyDataset, "no identities");
  double mean = 0.0;
  for (auto c : counts) mean += static_cast<double>(c);
  mean /= static_cast<double>(counts.size());
  if (mean == 0.0) fail(ErrorCode::kEmptyDataset, "no images");
  double var = 0.0;
  for (auto c : counts) var += (static_cast<double>(c) - mean) * (static_cast<double>(c) - mean);
  var /= static_cast<double>(counts.size());
  return 100.0 * std::sqrt(var) / mean;
}

// Statistics over one split, or over all splits when none is named.
inline DatasetStats dataset_stats(const DatasetManifest& m, const std::optional<std::string>& split = std::nullopt) {
  std::vector<std::size_t> counts;
  for (const auto& [name, ids] : m.splits) {
    if (split && name != *split) continue;
    for (const auto& e : ids) counts.push_back(e.files.size());
  }
  DatasetStats s;
  s.identities = counts.size();
  for (auto c : counts) s.images += c;
  s.cv_percent = coefficient_of_variation_percent(counts);
  return s;
}

struct LabeledImage {
  std::string identity;
  std::string file;
  image::GrayImage image;
};

inline std::vector<LabeledImage> load_split(const fs::path& root, const DatasetManifest& m, const std::string& split) {
  auto it = m.splits.find(split);
  if (it == m.splits.end()) fail(ErrorCode::kDataError, "dataset has no split '" + split + "'");
  std::vector<LabeledImage> out;
  for (const auto& e : it->second) {
    for (const auto& f : e.files) out.push_back({e.id, f, image::load_image(root / f)});
  }
  if (out.empty()) fail(ErrorCode::kEmptyDataset, "split '" + split + "' has no images");
  return out;
}

}  // namespace muzzle::data
