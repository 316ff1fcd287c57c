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

#include <stdexcept>
#include <string>
#include <string_view>

namespace muzzle {

// Closed error taxonomy shared by every module. The string form is the stable
// machine-readable code surfaced by the CLI and the HTTP service.
enum class ErrorCode {
  kSpecError,
  kNumericError,
  kFormatError,
  kVersionMismatch,
  kTruncated,
  kChecksumMismatch,
  kIoError,
  kEmptyImage,
  kTooSmall,
  kEmptyCrop,
  kDecodeError,
  kDataError,
  kRefuseOverwrite,
  kEmptyDataset,
  kModelError,
  kInsufficientPairs,
  kDuplicateId,
  kNotEnrolled,
  kEmptyGallery,
  kNoMuzzle,
  kMultipleMuzzles,
  kCropTooSmall,
  kBadRequest,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kSpecError: return "SPEC_ERROR";
    case ErrorCode::kNumericError: return "NUMERIC_ERROR";
    case ErrorCode::kFormatError: return "FORMAT_ERROR";
    case ErrorCode::kVersionMismatch: return "VERSION_MISMATCH";
    case ErrorCode::kTruncated: return "TRUNCATED";
    case ErrorCode::kChecksumMismatch: return "CHECKSUM_MISMATCH";
    case ErrorCode::kIoError: return "IO_ERROR";
    case ErrorCode::kEmptyImage: return "EMPTY_IMAGE";
    case ErrorCode::kTooSmall: return "TOO_SMALL";
    case ErrorCode::kEmptyCrop: return "EMPTY_CROP";
    case ErrorCode::kDecodeError: return "DECODE_ERROR";
    case ErrorCode::kDataError: return "DATA_ERROR";
    case ErrorCode::kRefuseOverwrite: return "REFUSE_OVERWRITE";
    case ErrorCode::kEmptyDataset: return "EMPTY_DATASET";
    case ErrorCode::kModelError: return "MODEL_ERROR";
    case ErrorCode::kInsufficientPairs: return "INSUFFICIENT_PAIRS";
    case ErrorCode::kDuplicateId: return "DUPLICATE_ID";
    case ErrorCode::kNotEnrolled: return "NOT_ENROLLED";
    case ErrorCode::kEmptyGallery: return "EMPTY_GALLERY";
    case ErrorCode::kNoMuzzle: return "NO_MUZZLE";
    case ErrorCode::kMultipleMuzzles: return "MULTIPLE_MUZZLES";
    case ErrorCode::kCropTooSmall: return "CROP_TOO_SMALL";
    case ErrorCode::kBadRequest: return "BAD_REQUEST";
  }
  return "UNKNOWN";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace muzzle
