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

#include <png.h>

#include <cstring>

#include "muzzle/image/clahe.hpp"
#include "muzzle/image/codec.hpp"
#include "muzzle/image/ops.hpp"
#include "muzzle/image/preprocess.hpp"
#include "muzzle/image/sharpen.hpp"
#include "muzzle/rng.hpp"
#include "support/clahe_oracle.hpp"

namespace muzzle::image {
namespace {

template <typename F>
ErrorCode code_of(F&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected muzzle::Error";
  return ErrorCode::kBadRequest;
}

GrayImage random_image(int w, int h, SplitMix64& rng) {
  GrayImage img(w, h);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.below(256));
  return img;
}

TEST(Grayscale, LumaExamples) {
  RgbImage rgb{3, 1, {255, 255, 255, 0, 0, 0, 255, 0, 0}};
  const GrayImage g = to_grayscale(rgb);
  EXPECT_EQ(g.pixels, (std::vector<std::uint8_t>{255, 0, 76}));
  EXPECT_EQ(code_of([] { to_grayscale(RgbImage{}); }), ErrorCode::kEmptyImage);
}

TEST(Sharpen, KernelIsTheUnsharpMatrix) {
  EXPECT_EQ(kSharpenKernel[0], (std::array<int, 3>{0, -1, 0}));
  EXPECT_EQ(kSharpenKernel[1], (std::array<int, 3>{-1, 5, -1}));
  EXPECT_EQ(kSharpenKernel[2], (std::array<int, 3>{0, -1, 0}));
}

TEST(Sharpen, ConstantImageUnchanged) {
  for (double k : {0.0, 0.5, 1.0, 2.5}) {
    const GrayImage img(7, 5, 123);
    EXPECT_EQ(sharpen(img, {k}), img) << k;
  }
}

TEST(Sharpen, Impulse) {
  GrayImage img(5, 5, 0);
  img.at(2, 2) = 100;
  const GrayImage out = sharpen(img, {1.0});
  EXPECT_EQ(out.at(2, 2), 255);
  EXPECT_EQ(out.at(1, 2), 0);
  EXPECT_EQ(out.at(3, 2), 0);
  EXPECT_EQ(out.at(2, 1), 0);
  EXPECT_EQ(out.at(2, 3), 0);
  EXPECT_EQ(out.at(0, 0), 0);
}

TEST(Sharpen, KZeroIsIdentity) {
  SplitMix64 rng(1);
  const GrayImage img = random_image(9, 6, rng);
  EXPECT_EQ(sharpen(img, {0.0}), img);
}

TEST(Sharpen, HalfWeightRoundsHalfUp) {
  // f = 10 everywhere except centre 20: s(centre) = 5*20 - 4*10 = 60,
  // g = 20 + 0.5 * 40 = 40; neighbours s = 5*10 - 3*10 - 20 = 0, g = 10 - 5 = 5.
  GrayImage img(3, 3, 10);
  img.at(1, 1) = 20;
  const GrayImage out = sharpen(img, {0.5});
  EXPECT_EQ(out.at(1, 1), 40);
  EXPECT_EQ(out.at(0, 1), 5);
  // Corner: replicate padding gives s = 5*10 - 10 - 10 - 10 - 10 = 10.
  EXPECT_EQ(out.at(0, 0), 10);
}

TEST(Sharpen, TooSmall) {
  EXPECT_EQ(code_of([] { sharpen(GrayImage(2, 5, 0)); }), ErrorCode::kTooSmall);
}

TEST(Clahe, ConstantImageStaysConstant) {
  for (double clip : {1.0, 2.0, 4.0, 300.0}) {
    for (int v : {0, 17, 128, 255}) {
      const GrayImage out = clahe(GrayImage(32, 24, static_cast<std::uint8_t>(v)), {4, 3, clip});
      for (auto p : out.pixels) ASSERT_EQ(p, out.pixels[0]) << clip << " " << v;
    }
  }
}

TEST(Clahe, SingleTileUnclippedIsGlobalEqualization) {
  SplitMix64 rng(5);
  for (int t = 0; t < 10; ++t) {
    const GrayImage img = random_image(5 + static_cast<int>(rng.below(20)), 5 + static_cast<int>(rng.below(20)), rng);
    EXPECT_EQ(clahe(img, {1, 1, 256.0}), testing::equalize_oracle(img));
  }
}

TEST(Clahe, TwoLevelPatternMatchesFrozenReference) {
  GrayImage img(8, 8);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) img.at(x, y) = (x < 5 && y < 6) ? 60 : 180;
  // Frozen from the scalar reference.
  const std::vector<std::uint8_t> expected{
      255, 255, 253, 249, 245, 255, 255, 255,  //
      255, 255, 253, 249, 245, 255, 255, 255,  //
      253, 253, 251, 248, 244, 255, 255, 255,  //
      249, 249, 248, 245, 243, 255, 255, 255,  //
      245, 245, 244, 243, 241, 255, 255, 255,  //
      241, 241, 241, 240, 240, 255, 255, 255,  //
      255, 255, 255, 255, 255, 255, 255, 255,  //
      255, 255, 255, 255, 255, 255, 255, 255};
  const GrayImage out = clahe(img, {2, 2, 2.0});
  EXPECT_EQ(out.pixels, expected);
  EXPECT_EQ(out, testing::clahe_oracle(img, 2, 2, 2.0));
}

TEST(Clahe, RandomImagesMatchScalarReference) {
  SplitMix64 rng(77);
  for (int t = 0; t < 20; ++t) {
    const int w = 4 + static_cast<int>(rng.below(29)), h = 4 + static_cast<int>(rng.below(29));
    const int gx = 1 + static_cast<int>(rng.below(std::min(w, 8))), gy = 1 + static_cast<int>(rng.below(std::min(h, 8)));
    const double clip = 1.0 + rng.uniform() * 5.0;
    const GrayImage img = random_image(w, h, rng);
    ASSERT_EQ(clahe(img, {gx, gy, clip}), testing::clahe_oracle(img, gx, gy, clip))
        << w << "x" << h << " grid " << gx << "x" << gy << " clip " << clip;
  }
}

TEST(Clahe, SingleTileMappingIsMonotone) {
  SplitMix64 rng(9);
  for (int t = 0; t < 10; ++t) {
    const GrayImage img = random_image(20, 20, rng);
    const GrayImage out = clahe(img, {1, 1, 1.0 + 3.0 * rng.uniform()});
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
      for (std::size_t j = 0; j < img.pixels.size(); ++j) {
        if (img.pixels[i] < img.pixels[j]) ASSERT_LE(out.pixels[i], out.pixels[j]);
      }
    }
  }
}

TEST(Clahe, RedistributedBinsStayBounded) {
  SplitMix64 rng(10);
  for (int t = 0; t < 50; ++t) {
    std::array<long long, 256> hist{};
    const long long n = 1 + static_cast<long long>(rng.below(5000));
    // Concentrated histograms exercise heavy clipping.
    for (long long i = 0; i < n; ++i) ++hist[rng.below(1 + rng.below(256))];
    const int ceiling = clahe_detail::clip_ceiling(1.0 + 3.0 * rng.uniform(), n);
    long long excess = 0;
    for (auto h : hist) excess += std::max(0LL, h - ceiling);
    clahe_detail::clip_and_redistribute(hist, ceiling);
    long long total = 0;
    for (auto h : hist) {
      EXPECT_LE(h, ceiling + excess / 256 + 1);
      total += h;
    }
    EXPECT_EQ(total, n);
    if (excess < 256) {
      for (auto h : hist) EXPECT_LE(h, ceiling + 1);
    }
  }
}

TEST(Clahe, GridLargerThanImage) {
  EXPECT_EQ(code_of([] { clahe(GrayImage(4, 4, 0), {5, 1, 2.0}); }), ErrorCode::kSpecError);
}

TEST(Clahe, Deterministic) {
  SplitMix64 rng(3);
  const GrayImage img = random_image(64, 48, rng);
  EXPECT_EQ(clahe(img), clahe(img));
}

TEST(Resize, SameSizeIsIdentity) {
  SplitMix64 rng(2);
  const GrayImage img = random_image(13, 7, rng);
  EXPECT_EQ(resize_bilinear(img, 13, 7), img);
}

TEST(Resize, CheckerboardToSinglePixel) {
  const GrayImage img(2, 2, std::vector<std::uint8_t>{0, 255, 255, 0});
  EXPECT_EQ(resize_bilinear(img, 1, 1).pixels, (std::vector<std::uint8_t>{128}));
}

TEST(Crop, ClampsAndRejectsEmpty) {
  SplitMix64 rng(2);
  const GrayImage img = random_image(10, 8, rng);
  const GrayImage c = crop(img, {-3, 5, 6, 10});
  EXPECT_EQ(c.width, 3);
  EXPECT_EQ(c.height, 3);
  EXPECT_EQ(c.at(0, 0), img.at(0, 5));
  EXPECT_EQ(code_of([&] { crop(img, {20, 20, 5, 5}); }), ErrorCode::kEmptyCrop);
}

TEST(Preprocess, OrderAndSize) {
  SplitMix64 rng(4);
  GrayImage img(200, 160);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      img.at(x, y) = static_cast<std::uint8_t>(std::clamp(int(100 + 60 * std::sin(x * 0.2) * std::cos(y * 0.15) + rng.normal() * 8), 0, 255));
  const GrayImage out = preprocess(img);
  EXPECT_EQ(out.width, 96);
  EXPECT_EQ(out.height, 96);
  EXPECT_EQ(out, resize_bilinear(clahe(sharpen(img)), 96, 96));
  EXPECT_NE(out, resize_bilinear(sharpen(clahe(img)), 96, 96));
  // Not idempotent.
  EXPECT_NE(preprocess(out), out);
}

TEST(Codec, PngRoundTripAndSniffing) {
  SplitMix64 rng(8);
  const GrayImage img = random_image(31, 17, rng);
  const std::string bytes = encode_png(img);
  EXPECT_TRUE(looks_like_png(bytes));
  EXPECT_EQ(decode_image(bytes), img);
  EXPECT_EQ(code_of([] { decode_image("not an image at all"); }), ErrorCode::kDecodeError);
  EXPECT_EQ(code_of([&] { decode_image(bytes.substr(0, 40)); }), ErrorCode::kDecodeError);
}

TEST(Codec, RgbPngUsesLuma) {
  png_image p;
  std::memset(&p, 0, sizeof p);
  p.version = PNG_IMAGE_VERSION;
  p.width = 2;
  p.height = 1;
  p.format = PNG_FORMAT_RGB;
  const std::uint8_t rgb[6] = {255, 0, 0, 10, 200, 30};
  png_alloc_size_t size = 0;
  ASSERT_TRUE(png_image_write_to_memory(&p, nullptr, &size, 0, rgb, 0, nullptr));
  std::string buf(size, '\0');
  ASSERT_TRUE(png_image_write_to_memory(&p, buf.data(), &size, 0, rgb, 0, nullptr));
  const GrayImage g = decode_image(buf);
  // round(0.299*10 + 0.587*200 + 0.114*30) = round(123.81) = 124
  EXPECT_EQ(g.pixels, (std::vector<std::uint8_t>{76, 124}));
}

TEST(Codec, JpegDecode) {
  const GrayImage img(24, 16, 90);
  const std::string bytes = encode_jpeg(img);
  EXPECT_TRUE(looks_like_jpeg(bytes));
  const GrayImage back = decode_image(bytes);
  ASSERT_EQ(back.width, 24);
  ASSERT_EQ(back.height, 16);
  for (auto p : back.pixels) EXPECT_NEAR(p, 90, 2);
  std::string broken = bytes.substr(0, 20);
  EXPECT_EQ(code_of([&] { decode_image(broken); }), ErrorCode::kDecodeError);
}

}  // namespace
}  // namespace muzzle::image
