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

#include <charconv>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "muzzle/detector/detector.hpp"
#include "muzzle/embedder.hpp"
#include "muzzle/error.hpp"
#include "muzzle/gallery.hpp"
#include "muzzle/image/codec.hpp"
#include "muzzle/image/ops.hpp"
#include "muzzle/image/preprocess.hpp"

// After Eigen: httplib pulls in system headers whose macros break it.
#include "httplib.h"

// HTTP facade: decode -> detect -> exactly one box -> crop -> size check ->
// preprocess -> embed, then a gallery operation. Every JSON response carries a
// "code" field: "OK" or one of the error codes in muzzle::ErrorCode.
namespace muzzle::service {

using nlohmann::json;
using image::GrayImage;
using image::Rect;

inline constexpr int kMinCropSide = 64;

enum class Stage { kDecode, kDetect, kCrop, kDimensionCheck, kPreprocess, kEmbed, kDone };

constexpr std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::kDecode: return "decode";
    case Stage::kDetect: return "detect";
    case Stage::kCrop: return "crop";
    case Stage::kDimensionCheck: return "dimension_check";
    case Stage::kPreprocess: return "preprocess";
    case Stage::kEmbed: return "embed";
    case Stage::kDone: return "done";
  }
  return "unknown";
}

// error is set iff the pipeline stopped before producing an embedding.
struct PipelineResult {
  Stage stage = Stage::kDecode;
  std::vector<detect::BBox> boxes;
  std::optional<Rect> crop;
  std::optional<embed::Embedding> embedding;
  std::optional<ErrorCode> error;
  std::string message;

  bool ok() const { return !error.has_value(); }
};

// Normalized box to pixel rectangle, clamped to the image.
inline Rect to_pixel_rect(const detect::BBox& b, int width, int height) {
  const int x0 = static_cast<int>(std::floor(b.x0() * width + 0.5));
  const int y0 = static_cast<int>(std::floor(b.y0() * height + 0.5));
  const int x1 = static_cast<int>(std::floor(b.x1() * width + 0.5));
  const int y1 = static_cast<int>(std::floor(b.y1() * height + 0.5));
  return image::clamp_rect({x0, y0, x1 - x0, y1 - y0}, width, height);
}

struct PipelineConfig {
  int min_crop_side = kMinCropSide;
  image::PreprocessParams preprocess{};
};

class Pipeline {
 public:
  using DetectFn = std::function<std::vector<detect::BBox>(const GrayImage&)>;

  Pipeline(DetectFn detect, embed::Embedder embedder, PipelineConfig cfg = {})
      : detect_(std::move(detect)), embedder_(std::move(embedder)), cfg_(cfg) {
    cfg_.preprocess.output_size = embedder_.input_size();
  }

  Pipeline(detect::Detector detector, embed::Embedder embedder, PipelineConfig cfg = {})
      : Pipeline(
            [d = std::move(detector)](const GrayImage& img) { return d.detect(img); }, std::move(embedder), cfg) {}

  const embed::Embedder& embedder() const { return embedder_; }
  const PipelineConfig& config() const { return cfg_; }

  PipelineResult run(std::string_view encoded) const {
    PipelineResult r;
    GrayImage img;
    try {
      img = image::decode_image(encoded);
    } catch (const Error& e) {
      r.error = ErrorCode::kDecodeError;
      r.message = e.what();
      return r;
    }
    return run(img);
  }

  PipelineResult run(const GrayImage& img) const {
    PipelineResult r;
    r.stage = Stage::kDetect;
    if (img.empty()) return stop(std::move(r), ErrorCode::kDecodeError, "image has no pixels");
    r.boxes = detect_(img);
    if (r.boxes.empty()) return stop(std::move(r), ErrorCode::kNoMuzzle, "no muzzle detected");
    if (r.boxes.size() > 1) {
      return stop(std::move(r), ErrorCode::kMultipleMuzzles,
                  std::to_string(r.boxes.size()) + " muzzles detected, expected exactly one");
    }
    r.stage = Stage::kCrop;
    const Rect rect = to_pixel_rect(r.boxes.front(), img.width, img.height);
    if (rect.empty()) return stop(std::move(r), ErrorCode::kCropTooSmall, "detected box lies outside the image");
    r.crop = rect;
    const GrayImage cropped = image::crop(img, rect);
    r.stage = Stage::kDimensionCheck;
    if (rect.w < cfg_.min_crop_side || rect.h < cfg_.min_crop_side) {
      return stop(std::move(r), ErrorCode::kCropTooSmall,
                  "muzzle crop is " + std::to_string(rect.w) + "x" + std::to_string(rect.h) + ", minimum is " +
                      std::to_string(cfg_.min_crop_side) + "x" + std::to_string(cfg_.min_crop_side));
    }
    r.stage = Stage::kPreprocess;
    const GrayImage pre = image::preprocess(cropped, cfg_.preprocess);
    r.stage = Stage::kEmbed;
    r.embedding = embedder_.embed(pre);
    r.stage = Stage::kDone;
    return r;
  }

 private:
  static PipelineResult stop(PipelineResult r, ErrorCode code, std::string msg) {
    r.error = code;
    r.message = std::move(msg);
    return r;
  }

  DetectFn detect_;
  embed::Embedder embedder_;
  PipelineConfig cfg_;
};

// Transport-neutral request: the "image" part plus every other form field.
struct ApiRequest {
  std::optional<std::string> image;
  std::map<std::string, std::string> fields;
};

struct ApiResponse {
  int status = 200;
  json body;
};

inline int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNoMuzzle:
    case ErrorCode::kMultipleMuzzles:
    case ErrorCode::kCropTooSmall:
    case ErrorCode::kDecodeError:
    case ErrorCode::kEmptyImage:
    case ErrorCode::kTooSmall:
    case ErrorCode::kEmptyCrop: return 422;
    case ErrorCode::kDuplicateId:
    case ErrorCode::kEmptyGallery: return 409;
    case ErrorCode::kNotEnrolled: return 404;
    case ErrorCode::kBadRequest:
    case ErrorCode::kSpecError: return 400;
    default: return 500;
  }
}

inline json pipeline_json(const PipelineResult& r) {
  json j = {{"stage", to_string(r.stage)}, {"boxes", r.boxes.size()}};
  if (r.crop) j["crop"] = {{"x", r.crop->x}, {"y", r.crop->y}, {"w", r.crop->w}, {"h", r.crop->h}};
  if (!r.boxes.empty()) {
    json boxes = json::array();
    for (const auto& b : r.boxes) {
      boxes.push_back({{"cx", b.cx}, {"cy", b.cy}, {"w", b.w}, {"h", b.h}, {"confidence", b.confidence}});
    }
    j["detections"] = std::move(boxes);
  }
  return j;
}

inline ApiResponse error_response(ErrorCode code, const std::string& message, const PipelineResult* p = nullptr) {
  ApiResponse res{http_status(code), {{"code", to_string(code)}, {"message", message}}};
  if (p) res.body["pipeline"] = pipeline_json(*p);
  return res;
}

class Service {
 public:
  // threshold_override replaces the gallery threshold for decisions only; the
  // gallery file keeps its own value.
  Service(Pipeline pipeline, gallery::SharedGallery& store, std::optional<double> threshold_override = std::nullopt)
      : pipeline_(std::move(pipeline)), gallery_(store), override_(threshold_override) {
    if (override_ && (!std::isfinite(*override_) || *override_ <= 0)) {
      fail(ErrorCode::kSpecError, "threshold override must be finite and > 0");
    }
    if (gallery_.dim() != pipeline_.embedder().dim()) {
      fail(ErrorCode::kModelError, "gallery dimension " + std::to_string(gallery_.dim()) +
                                       " does not match embedder dimension " +
                                       std::to_string(pipeline_.embedder().dim()));
    }
  }

  const Pipeline& pipeline() const { return pipeline_; }

  ApiResponse enroll(const ApiRequest& req) const {
    return guarded([&] {
      const std::string id = require_field(req, "cattle_id");
      json meta = parse_metadata(req);
      const auto p = run_image(req);
      if (!p.ok()) return error_response(*p.error, p.message, &p);
      gallery_.enroll({id, *p.embedding, std::move(meta), ""});
      return ApiResponse{201,
                         {{"code", "OK"}, {"cattle_id", id}, {"dim", p.embedding->size()}, {"pipeline", pipeline_json(p)}}};
    });
  }

  ApiResponse verify(const ApiRequest& req) const {
    return guarded([&] {
      const std::string id = require_field(req, "cattle_id");
      if (!gallery_.find(id)) return error_response(ErrorCode::kNotEnrolled, "cattle id '" + id + "' is not enrolled");
      const auto p = run_image(req);
      if (!p.ok()) return error_response(*p.error, p.message, &p);
      auto v = gallery_.verify(*p.embedding, id);
      if (override_) v = {v.distance <= *override_, v.distance, *override_};
      return ApiResponse{200,
                         {{"code", "OK"},
                          {"cattle_id", id},
                          {"match", v.match},
                          {"distance", v.distance},
                          {"threshold", v.threshold},
                          {"pipeline", pipeline_json(p)}}};
    });
  }

  ApiResponse identify(const ApiRequest& req) const {
    return guarded([&] {
      std::size_t k = 5;
      if (auto it = req.fields.find("k"); it != req.fields.end()) k = parse_k(it->second);
      if (gallery_.size() == 0) return error_response(ErrorCode::kEmptyGallery, "gallery has no enrolled cattle");
      const auto p = run_image(req);
      if (!p.ok()) return error_response(*p.error, p.message, &p);
      auto res = gallery_.identify(*p.embedding, k);
      if (override_) {
        res.threshold = *override_;
        res.match = res.candidates.front().distance <= *override_;
      }
      json cands = json::array();
      for (const auto& c : res.candidates) cands.push_back({{"id", c.id}, {"distance", c.distance}});
      return ApiResponse{200,
                         {{"code", "OK"},
                          {"candidates", std::move(cands)},
                          {"match", res.match},
                          {"threshold", res.threshold},
                          {"pipeline", pipeline_json(p)}}};
    });
  }

  ApiResponse record(const std::string& id) const {
    return guarded([&] {
      const auto rec = gallery_.find(id);
      if (!rec) return error_response(ErrorCode::kNotEnrolled, "cattle id '" + id + "' is not enrolled");
      return ApiResponse{200,
                         {{"code", "OK"}, {"cattle_id", rec->id}, {"meta", rec->meta}, {"enrolled_at", rec->ts},
                          {"dim", rec->vec.size()}}};
    });
  }

  ApiResponse health() const {
    return {200,
            {{"code", "OK"},
             {"status", "ok"},
             {"gallery_size", gallery_.size()},
             {"dim", gallery_.dim()},
             {"threshold", threshold()}}};
  }

  double threshold() const { return override_ ? *override_ : gallery_.threshold(); }

 private:
  template <typename Fn>
  static ApiResponse guarded(Fn&& fn) {
    try {
      return fn();
    } catch (const Error& e) {
      return error_response(e.code(), e.what());
    } catch (const std::exception& e) {
      return {500, {{"code", "INTERNAL_ERROR"}, {"message", e.what()}}};
    }
  }

  static std::string require_field(const ApiRequest& req, const std::string& name) {
    auto it = req.fields.find(name);
    if (it == req.fields.end() || it->second.empty()) fail(ErrorCode::kBadRequest, "missing form field '" + name + "'");
    return it->second;
  }

  // Well-known keys come from individual fields; "metadata" may carry a JSON
  // object of extras. Individual fields win on conflict.
  static json parse_metadata(const ApiRequest& req) {
    json meta = json::object();
    if (auto it = req.fields.find("metadata"); it != req.fields.end() && !it->second.empty()) {
      try {
        meta = json::parse(it->second);
      } catch (const json::exception& e) {
        fail(ErrorCode::kBadRequest, std::string("metadata is not valid JSON: ") + e.what());
      }
      if (!meta.is_object()) fail(ErrorCode::kBadRequest, "metadata must be a JSON object");
    }
    for (auto key : gallery::kMetadataKeys) {
      if (auto it = req.fields.find(std::string(key)); it != req.fields.end()) meta[std::string(key)] = it->second;
    }
    return meta;
  }

  static std::size_t parse_k(const std::string& s) {
    long long k = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), k);
    if (ec != std::errc() || ptr != s.data() + s.size() || k < 1) {
      fail(ErrorCode::kBadRequest, "k must be a positive integer, got '" + s + "'");
    }
    return static_cast<std::size_t>(k);
  }

  PipelineResult run_image(const ApiRequest& req) const {
    if (!req.image || req.image->empty()) fail(ErrorCode::kBadRequest, "missing multipart file part 'image'");
    return pipeline_.run(*req.image);
  }

  Pipeline pipeline_;
  gallery::SharedGallery& gallery_;
  std::optional<double> override_;
};

inline ApiRequest from_http(const httplib::Request& req) {
  ApiRequest out;
  for (const auto& [name, part] : req.files) {
    if (name == "image") {
      out.image = part.content;
    } else {
      out.fields[name] = part.content;
    }
  }
  for (const auto& [name, value] : req.params) out.fields.emplace(name, value);
  return out;
}

inline void reply(httplib::Response& res, const ApiResponse& api) {
  res.status = api.status;
  res.set_content(api.body.dump(), "application/json");
}

// Installs every route on server; service must outlive it.
inline void install_routes(httplib::Server& server, const Service& service) {
  const auto post = [&](const std::string& path, ApiResponse (Service::*fn)(const ApiRequest&) const) {
    server.Post(path, [&service, fn](const httplib::Request& req, httplib::Response& res) {
      if (!req.is_multipart_form_data()) {
        reply(res, error_response(ErrorCode::kBadRequest, "expected multipart/form-data"));
        return;
      }
      reply(res, (service.*fn)(from_http(req)));
    });
  };
  post("/api/v1/cattle/enroll", &Service::enroll);
  post("/api/v1/cattle/verify", &Service::verify);
  post("/api/v1/cattle/identify", &Service::identify);
  server.Get(R"(/api/v1/cattle/([^/]+))", [&service](const httplib::Request& req, httplib::Response& res) {
    reply(res, service.record(req.matches[1]));
  });
  server.Get("/healthz", [&service](const httplib::Request&, httplib::Response& res) { reply(res, service.health()); });
  server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string msg = "unknown error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      msg = e.what();
    } catch (...) {
    }
    reply(res, {500, {{"code", "INTERNAL_ERROR"}, {"message", msg}}});
  });
  server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return;
    const auto code = res.status == 404 ? "NOT_FOUND" : "HTTP_ERROR";
    reply(res, {res.status, {{"code", code}, {"message", "no such route"}}});
  });
}

}  // namespace muzzle::service
