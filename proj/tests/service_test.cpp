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

#include <thread>

#include "muzzle/nn/spec.hpp"
#include "muzzle/service.hpp"
#include "muzzle/synthgen.hpp"
#include "support/gallery_fixtures.hpp"

namespace muzzle::service {
namespace {

using testing::TempDir;

// Scripted detector: the next call returns whatever `boxes` holds.
struct ScriptedDetector {
  std::vector<detect::BBox> boxes = {{0.5, 0.5, 0.8, 0.8, 0.9}};
};

embed::Embedder small_embedder(int dim = 32) {
  return embed::Embedder(nn::Network<float>(nn::small_conv_net(dim, 7)), 0.5);
}

std::string photo(std::uint64_t seed, int variation = 1) {
  const auto spec = synth::identity_from_seed("cow", seed);
  return image::encode_png(synth::render_sample(spec, static_cast<std::uint64_t>(variation)));
}

struct Fixture {
  TempDir dir;
  ScriptedDetector script;
  gallery::SharedGallery store;
  Service service;

  Fixture()
      : store(gallery::SharedGallery::open(dir.path / "g.jsonl", 32, 0.5)),
        service(Pipeline([this](const GrayImage&) { return script.boxes; }, small_embedder()), store) {}

  ApiRequest request(std::string image, std::map<std::string, std::string> fields = {}) {
    return {std::move(image), std::move(fields)};
  }
};

TEST(PipelineTest, ErrorTaxonomy) {
  Fixture f;
  const auto img = photo(1);
  f.script.boxes = {};
  auto r = f.service.pipeline().run(img);
  EXPECT_EQ(r.error, ErrorCode::kNoMuzzle);
  EXPECT_EQ(r.stage, Stage::kDetect);

  f.script.boxes = {{0.3, 0.3, 0.3, 0.3, 0.9}, {0.7, 0.7, 0.3, 0.3, 0.8}};
  r = f.service.pipeline().run(img);
  EXPECT_EQ(r.error, ErrorCode::kMultipleMuzzles);
  EXPECT_EQ(r.boxes.size(), 2u);

  f.script.boxes = {{0.5, 0.5, 0.2, 0.6, 0.9}};
  r = f.service.pipeline().run(img);
  EXPECT_EQ(r.error, ErrorCode::kCropTooSmall);
  EXPECT_EQ(r.stage, Stage::kDimensionCheck);
  ASSERT_TRUE(r.crop.has_value());
  EXPECT_EQ(r.crop->w, 52);

  r = f.service.pipeline().run(std::string("not an image"));
  EXPECT_EQ(r.error, ErrorCode::kDecodeError);

  f.script.boxes = {{0.5, 0.5, 0.8, 0.8, 0.9}};
  r = f.service.pipeline().run(img);
  ASSERT_TRUE(r.ok()) << r.message;
  EXPECT_EQ(r.stage, Stage::kDone);
  EXPECT_EQ(r.embedding->size(), 32u);
}

TEST(PipelineTest, PixelRectRoundsAndClamps) {
  EXPECT_EQ(to_pixel_rect({0.5, 0.5, 0.5, 0.5, 1}, 256, 256), (Rect{64, 64, 128, 128}));
  EXPECT_EQ(to_pixel_rect({0.05, 0.5, 0.3, 0.5, 1}, 100, 100), (Rect{0, 25, 20, 50}));
}

TEST(ServiceTest, EnrollVerifyRoundtrip) {
  Fixture f;
  const auto img = photo(11);
  auto res = f.service.enroll(f.request(img, {{"cattle_id", "cow-11"}, {"breed", "Gir"}, {"metadata", R"({"pen":4})"}}));
  ASSERT_EQ(res.status, 201) << res.body.dump();
  EXPECT_EQ(res.body["code"], "OK");
  EXPECT_EQ(res.body["dim"], 32);

  res = f.service.verify(f.request(img, {{"cattle_id", "cow-11"}}));
  ASSERT_EQ(res.status, 200) << res.body.dump();
  EXPECT_TRUE(res.body["match"].get<bool>());
  EXPECT_LT(res.body["distance"].get<double>(), 1e-6);
  EXPECT_EQ(res.body["threshold"], 0.5);

  res = f.service.record("cow-11");
  ASSERT_EQ(res.status, 200);
  EXPECT_EQ(res.body["meta"]["breed"], "Gir");
  EXPECT_EQ(res.body["meta"]["pen"], 4);
}

TEST(ServiceTest, ErrorStatuses) {
  Fixture f;
  const auto img = photo(3);
  EXPECT_EQ(f.service.identify(f.request(img)).status, 409);
  EXPECT_EQ(f.service.identify(f.request(img)).body["code"], "EMPTY_GALLERY");
  ASSERT_EQ(f.service.enroll(f.request(img, {{"cattle_id", "a"}})).status, 201);

  auto res = f.service.enroll(f.request(img, {{"cattle_id", "a"}}));
  EXPECT_EQ(res.status, 409);
  EXPECT_EQ(res.body["code"], "DUPLICATE_ID");

  res = f.service.verify(f.request(img, {{"cattle_id", "ghost"}}));
  EXPECT_EQ(res.status, 404);
  EXPECT_EQ(res.body["code"], "NOT_ENROLLED");
  EXPECT_EQ(f.service.record("ghost").status, 404);

  EXPECT_EQ(f.service.enroll(f.request(img)).status, 400);
  EXPECT_EQ(f.service.enroll({std::nullopt, {{"cattle_id", "b"}}}).status, 400);
  EXPECT_EQ(f.service.enroll(f.request(img, {{"cattle_id", "b"}, {"metadata", "[1]"}})).status, 400);
  EXPECT_EQ(f.service.identify(f.request(img, {{"k", "0"}})).status, 400);

  f.script.boxes = {};
  res = f.service.enroll(f.request(img, {{"cattle_id", "b"}}));
  EXPECT_EQ(res.status, 422);
  EXPECT_EQ(res.body["code"], "NO_MUZZLE");
  EXPECT_EQ(res.body["pipeline"]["stage"], "detect");
  EXPECT_EQ(f.store.size(), 1u);
}

TEST(ServiceTest, ReadsNeverMutateGallery) {
  Fixture f;
  for (int i = 0; i < 3; ++i) {
    ASSERT_EQ(f.service.enroll(f.request(photo(20 + i), {{"cattle_id", "c" + std::to_string(i)}})).status, 201);
  }
  const auto before = read_file(f.store.path());
  auto res = f.service.identify(f.request(photo(21, 2), {{"k", "10"}}));
  ASSERT_EQ(res.status, 200);
  ASSERT_EQ(res.body["candidates"].size(), 3u);
  for (std::size_t i = 1; i < 3; ++i) {
    EXPECT_LE(res.body["candidates"][i - 1]["distance"].get<double>(), res.body["candidates"][i]["distance"].get<double>());
  }
  f.service.verify(f.request(photo(21, 2), {{"cattle_id", "c0"}}));
  EXPECT_EQ(read_file(f.store.path()), before);
}

TEST(ServiceTest, HttpTransport) {
  Fixture f;
  httplib::Server server;
  install_routes(server, f.service);
  const int port = server.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  httplib::Client cli("127.0.0.1", port);
  const auto img = photo(5);
  httplib::MultipartFormDataItems items = {{"image", img, "cow.png", "image/png"}, {"cattle_id", "cow-5", "", ""}};
  auto r = cli.Post("/api/v1/cattle/enroll", items);
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 201);
  r = cli.Post("/api/v1/cattle/verify", items);
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);
  EXPECT_TRUE(json::parse(r->body)["match"].get<bool>());
  r = cli.Get("/api/v1/cattle/cow-5");
  ASSERT_TRUE(r);
  EXPECT_EQ(json::parse(r->body)["cattle_id"], "cow-5");
  r = cli.Get("/healthz");
  ASSERT_TRUE(r);
  EXPECT_EQ(json::parse(r->body)["gallery_size"], 1);
  r = cli.Post("/api/v1/cattle/verify", "x", "text/plain");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 400);
  EXPECT_EQ(json::parse(r->body)["code"], "BAD_REQUEST");
  r = cli.Get("/nowhere");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 404);

  server.stop();
  t.join();
}

}  // namespace
}  // namespace muzzle::service
