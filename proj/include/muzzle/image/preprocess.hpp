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

#include "muzzle/image/clahe.hpp"
#include "muzzle/image/ops.hpp"
#include "muzzle/image/sharpen.hpp"

namespace muzzle::image {

inline constexpr int kEmbedderInputSize = 96;

struct PreprocessParams {
  SharpenParams sharpen;
  ClaheParams clahe;
  int output_size = kEmbedderInputSize;
};

// sharpen -> CLAHE -> resize to the embedder input.
inline GrayImage preprocess(const GrayImage& img, const PreprocessParams& p = {}) {
  return resize_bilinear(clahe(sharpen(img, p.sharpen), p.clahe), p.output_size, p.output_size);
}

}  // namespace muzzle::image
