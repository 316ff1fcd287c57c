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
#include <array>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"
#include "muzzle/embedder.hpp"
#include "muzzle/error.hpp"
#include "muzzle/fileio.hpp"

// Gallery file, UTF-8 with LF line ends:
//   line 1   {"version":1,"dim":D,"metric":"sql2","threshold":t}
//   line k+1 {"id":...,"vec":[D numbers],"meta":{...},"ts":"YYYY-MM-DDTHH:MM:SSZ"}
namespace muzzle::gallery {

inline constexpr int kGalleryVersion = 1;
inline constexpr std::string_view kMetric = "sql2";
inline constexpr int kDefaultDim = 128;

// Well-known metadata keys; any other key is kept as a free-form extra.
inline constexpr std::array<std::string_view, 5> kMetadataKeys = {"breed", "gender", "date_of_birth",
                                                                  "disease_history", "vaccine_history"};

struct EnrollmentRecord {
  std::string id;
  embed::Embedding vec;
  nlohmann::json meta = nlohmann::json::object();
  std::string ts;

  friend bool operator==(const EnrollmentRecord&, const EnrollmentRecord&) = default;
};

inline std::string utc_timestamp(std::chrono::system_clock::time_point t = std::chrono::system_clock::now()) {
  const std::time_t secs = std::chrono::system_clock::to_time_t(t);
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct VerifyResult {
  bool match = false;
  double distance = 0.0;
  double threshold = 0.0;
};

struct Candidate {
  std::string id;
  double distance = 0.0;
};

struct IdentifyResult {
  std::vector<Candidate> candidates;  // ascending distance, ties by id
  bool match = false;
  double threshold = 0.0;
};

// Value-type store; all records share dim and the store-level threshold.
class GalleryStore {
 public:
  explicit GalleryStore(int dim = kDefaultDim, double threshold = 1.0) : dim_(dim), threshold_(threshold) {
    if (dim <= 0) fail(ErrorCode::kSpecError, "gallery dimension must be positive");
    check_threshold(threshold);
  }

  int dim() const { return dim_; }
  double threshold() const { return threshold_; }
  void set_threshold(double t) {
    check_threshold(t);
    threshold_ = t;
  }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  const std::vector<EnrollmentRecord>& records() const { return records_; }

  bool contains(const std::string& id) const { return index_.contains(id); }

  const EnrollmentRecord& get(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) fail(ErrorCode::kNotEnrolled, "cattle id '" + id + "' is not enrolled");
    return records_[it->second];
  }

  void enroll(EnrollmentRecord rec) {
    if (rec.id.empty()) fail(ErrorCode::kSpecError, "cattle id must not be empty");
    if (contains(rec.id)) fail(ErrorCode::kDuplicateId, "cattle id '" + rec.id + "' is already enrolled");
    check_vector(rec.vec);
    if (rec.meta.is_null()) rec.meta = nlohmann::json::object();
    if (!rec.meta.is_object()) fail(ErrorCode::kSpecError, "metadata must be a JSON object");
    if (rec.ts.empty()) rec.ts = utc_timestamp();
    index_.emplace(rec.id, records_.size());
    records_.push_back(std::move(rec));
  }

  void remove(const std::string& id) {
    auto it = index_.find(id);
    if (it == index_.end()) fail(ErrorCode::kNotEnrolled, "cattle id '" + id + "' is not enrolled");
    records_.erase(records_.begin() + static_cast<std::ptrdiff_t>(it->second));
    rebuild_index();
  }

  VerifyResult verify(std::span<const float> probe, const std::string& claimed_id) const {
    check_vector(probe);
    const auto& rec = get(claimed_id);
    const double d = embed::squared_l2<float>(probe, rec.vec);
    return {d <= threshold_, d, threshold_};
  }

  IdentifyResult identify(std::span<const float> probe, std::size_t k) const {
    if (k < 1) fail(ErrorCode::kSpecError, "identify needs k >= 1");
    if (records_.empty()) fail(ErrorCode::kEmptyGallery, "gallery has no enrolled cattle");
    check_vector(probe);
    std::vector<Candidate> all;
    all.reserve(records_.size());
    for (const auto& r : records_) all.push_back({r.id, embed::squared_l2<float>(probe, r.vec)});
    const std::size_t n = std::min(k, all.size());
    auto before = [](const Candidate& a, const Candidate& b) {
      return a.distance != b.distance ? a.distance < b.distance : a.id < b.id;
    };
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n), all.end(), before);
    all.resize(n);
    IdentifyResult res;
    res.match = all.front().distance <= threshold_;
    res.threshold = threshold_;
    res.candidates = std::move(all);
    return res;
  }

  friend bool operator==(const GalleryStore& a, const GalleryStore& b) {
    return a.dim_ == b.dim_ && a.threshold_ == b.threshold_ && a.records_ == b.records_;
  }

 private:
  static void check_threshold(double t) {
    if (!std::isfinite(t) || t <= 0) fail(ErrorCode::kSpecError, "gallery threshold must be finite and > 0");
  }

  void check_vector(std::span<const float> v) const {
    if (static_cast<int>(v.size()) != dim_) {
      fail(ErrorCode::kSpecError, "embedding has dimension " + std::to_string(v.size()) + ", gallery expects " +
                                      std::to_string(dim_));
    }
    for (float x : v) {
      if (!std::isfinite(x)) fail(ErrorCode::kSpecError, "embedding contains a non-finite value");
    }
  }

  void rebuild_index() {
    index_.clear();
    for (std::size_t i = 0; i < records_.size(); ++i) index_.emplace(records_[i].id, i);
  }

  int dim_;
  double threshold_;
  std::vector<EnrollmentRecord> records_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline std::string serialize(const GalleryStore& store) {
  nlohmann::json header = {{"version", kGalleryVersion}, {"dim", store.dim()}, {"metric", kMetric},
                           {"threshold", store.threshold()}};
  std::string out = header.dump() + "\n";
  for (const auto& r : store.records()) {
    nlohmann::json vec = nlohmann::json::array();
    for (float v : r.vec) vec.push_back(v);
    nlohmann::json line = {{"id", r.id}, {"vec", std::move(vec)}, {"meta", r.meta}, {"ts", r.ts}};
    out += line.dump() + "\n";
  }
  return out;
}

namespace detail {

[[noreturn]] inline void bad_record(std::size_t index, std::size_t line, const std::string& why) {
  fail(ErrorCode::kFormatError,
       "gallery record " + std::to_string(index) + " (line " + std::to_string(line) + "): " + why);
}

inline std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t nl = text.find('\n', pos);
    const std::size_t end = nl == std::string_view::npos ? text.size() : nl;
    lines.push_back(text.substr(pos, end - pos));
    pos = end + 1;
  }
  return lines;
}

}  // namespace detail

inline GalleryStore deserialize(std::string_view text) {
  const auto lines = detail::split_lines(text);
  if (lines.empty()) fail(ErrorCode::kFormatError, "gallery header (line 1): file is empty");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(lines[0]);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormatError, std::string("gallery header (line 1): ") + e.what());
  }
  int dim = 0;
  double threshold = 0.0;
  try {
    if (header.at("version").get<int>() != kGalleryVersion) {
      fail(ErrorCode::kVersionMismatch, "gallery version " + header.at("version").dump() + " is not supported");
    }
    if (header.at("metric").get<std::string>() != kMetric) {
      fail(ErrorCode::kFormatError, "gallery header (line 1): unsupported metric " + header.at("metric").dump());
    }
    dim = header.at("dim").get<int>();
    threshold = header.at("threshold").get<double>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormatError, std::string("gallery header (line 1): ") + e.what());
  }
  if (dim <= 0 || !std::isfinite(threshold) || threshold <= 0) {
    fail(ErrorCode::kFormatError, "gallery header (line 1): dim and threshold must be positive");
  }
  GalleryStore store(dim, threshold);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::size_t index = i - 1;
    if (lines[i].empty()) detail::bad_record(index, i + 1, "blank line");
    EnrollmentRecord rec;
    try {
      const auto j = nlohmann::json::parse(lines[i]);
      rec.id = j.at("id").get<std::string>();
      rec.vec = j.at("vec").get<std::vector<float>>();
      rec.meta = j.at("meta");
      rec.ts = j.at("ts").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      detail::bad_record(index, i + 1, e.what());
    }
    if (rec.ts.empty()) detail::bad_record(index, i + 1, "missing timestamp");
    try {
      store.enroll(std::move(rec));
    } catch (const Error& e) {
      detail::bad_record(index, i + 1, e.what());
    }
  }
  return store;
}

inline void save(const GalleryStore& store, const std::filesystem::path& path) {
  write_file_atomic(path, serialize(store));
}

inline GalleryStore load(const std::filesystem::path& path) { return deserialize(read_file(path)); }

// Thread-safe handle bound to a file. Readers share the lock; every mutation
// happens under the exclusive lock and is persisted before it is released.
class SharedGallery {
 public:
  SharedGallery(GalleryStore store, std::filesystem::path path) : store_(std::move(store)), path_(std::move(path)) {}

  // Loads the file if it exists, otherwise starts empty and writes the header.
  static SharedGallery open(const std::filesystem::path& path, int dim, double threshold) {
    if (std::filesystem::exists(path)) {
      auto s = load(path);
      if (s.dim() != dim) {
        fail(ErrorCode::kModelError, "gallery dimension " + std::to_string(s.dim()) +
                                         " does not match embedder dimension " + std::to_string(dim));
      }
      return SharedGallery(std::move(s), path);
    }
    GalleryStore fresh(dim, threshold);
    save(fresh, path);
    return SharedGallery(std::move(fresh), path);
  }

  void enroll(EnrollmentRecord rec) {
    std::unique_lock lock(mu_);
    GalleryStore next = store_;
    next.enroll(std::move(rec));
    save(next, path_);
    store_ = std::move(next);
  }

  void remove(const std::string& id) {
    std::unique_lock lock(mu_);
    GalleryStore next = store_;
    next.remove(id);
    save(next, path_);
    store_ = std::move(next);
  }

  void set_threshold(double t) {
    std::unique_lock lock(mu_);
    GalleryStore next = store_;
    next.set_threshold(t);
    save(next, path_);
    store_ = std::move(next);
  }

  VerifyResult verify(std::span<const float> probe, const std::string& id) const {
    std::shared_lock lock(mu_);
    return store_.verify(probe, id);
  }

  IdentifyResult identify(std::span<const float> probe, std::size_t k) const {
    std::shared_lock lock(mu_);
    return store_.identify(probe, k);
  }

  std::optional<EnrollmentRecord> find(const std::string& id) const {
    std::shared_lock lock(mu_);
    if (!store_.contains(id)) return std::nullopt;
    return store_.get(id);
  }

  GalleryStore snapshot() const {
    std::shared_lock lock(mu_);
    return store_;
  }

  std::size_t size() const {
    std::shared_lock lock(mu_);
    return store_.size();
  }
  int dim() const { return store_.dim(); }
  double threshold() const {
    std::shared_lock lock(mu_);
    return store_.threshold();
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  mutable std::shared_mutex mu_;
  GalleryStore store_;
  std::filesystem::path path_;
};

}  // namespace muzzle::gallery
