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

// PNG / JPEG decode boundary. Everything past this header works on GrayImage.
#pragma once

#include <png.h>
// jpeglib.h needs FILE and size_t declared first.
#include <cstdio>
#include <jpeglib.h>

#include <csetjmp>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "muzzle/error.hpp"
#include "muzzle/image/gray_image.hpp"
#include "muzzle/image/ops.hpp"
#include "muzzle/fileio.hpp"

namespace muzzle::image {

inline bool looks_like_png(std::string_view bytes) {
  return bytes.size() >= 8 && std::memcmp(bytes.data(), "\x89PNG\r\n\x1a\n", 8) == 0;
}

inline bool looks_like_jpeg(std::string_view bytes) {
  return bytes.size() >= 3 && static_cast<unsigned char>(bytes[0]) == 0xFF &&
         static_cast<unsigned char>(bytes[1]) == 0xD8 && static_cast<unsigned char>(bytes[2]) == 0xFF;
}

inline GrayImage decode_png(std::string_view bytes) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    fail(ErrorCode::kDecodeError, std::string("png: ") + img.message);
  }
  const bool color = (img.format & PNG_FORMAT_FLAG_COLOR) != 0;
  img.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    fail(ErrorCode::kDecodeError, "png: " + msg);
  }
  const int w = static_cast<int>(img.width), h = static_cast<int>(img.height);
  if (w == 0 || h == 0) fail(ErrorCode::kEmptyImage, "png has zero size");
  if (color) return to_grayscale(RgbImage{w, h, std::move(buf)});
  return GrayImage(w, h, std::move(buf));
}

namespace codec_detail {

struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

inline void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegError*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

}  // namespace codec_detail

inline GrayImage decode_jpeg(std::string_view bytes) {
  jpeg_decompress_struct cinfo;
  codec_detail::JpegError err;
  std::vector<std::uint8_t> buf;
  int w = 0, h = 0, channels = 0;
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = codec_detail::jpeg_error_exit;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    fail(ErrorCode::kDecodeError, std::string("jpeg: ") + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = cinfo.jpeg_color_space == JCS_GRAYSCALE ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_start_decompress(&cinfo);
  w = static_cast<int>(cinfo.output_width);
  h = static_cast<int>(cinfo.output_height);
  channels = cinfo.output_components;
  buf.resize(static_cast<std::size_t>(w) * h * channels);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = buf.data() + static_cast<std::size_t>(cinfo.output_scanline) * w * channels;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  if (w == 0 || h == 0) fail(ErrorCode::kEmptyImage, "jpeg has zero size");
  if (channels == 3) return to_grayscale(RgbImage{w, h, std::move(buf)});
  return GrayImage(w, h, std::move(buf));
}

inline GrayImage decode_image(std::string_view bytes) {
  if (looks_like_png(bytes)) return decode_png(bytes);
  if (looks_like_jpeg(bytes)) return decode_jpeg(bytes);
  fail(ErrorCode::kDecodeError, "unrecognized image format (expected PNG or JPEG)");
}

inline std::string encode_png(const GrayImage& img) {
  if (img.empty()) fail(ErrorCode::kEmptyImage, "cannot encode an empty image");
  png_image pimg;
  std::memset(&pimg, 0, sizeof pimg);
  pimg.version = PNG_IMAGE_VERSION;
  pimg.width = static_cast<png_uint_32>(img.width);
  pimg.height = static_cast<png_uint_32>(img.height);
  pimg.format = PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&pimg, nullptr, &size, 0, img.pixels.data(), 0, nullptr)) {
    fail(ErrorCode::kIoError, std::string("png encode: ") + pimg.message);
  }
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&pimg, out.data(), &size, 0, img.pixels.data(), 0, nullptr)) {
    fail(ErrorCode::kIoError, std::string("png encode: ") + pimg.message);
  }
  out.resize(size);
  return out;
}

inline std::string encode_jpeg(const GrayImage& img, int quality = 95) {
  if (img.empty()) fail(ErrorCode::kEmptyImage, "cannot encode an empty image");
  jpeg_compress_struct cinfo;
  jpeg_error_mgr jerr;
  cinfo.err = jpeg_std_error(&jerr);
  jpeg_create_compress(&cinfo);
  unsigned char* mem = nullptr;
  unsigned long mem_size = 0;
  jpeg_mem_dest(&cinfo, &mem, &mem_size);
  cinfo.image_width = static_cast<JDIMENSION>(img.width);
  cinfo.image_height = static_cast<JDIMENSION>(img.height);
  cinfo.input_components = 1;
  cinfo.in_color_space = JCS_GRAYSCALE;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    JSAMPROW row = const_cast<std::uint8_t*>(img.pixels.data()) + static_cast<std::size_t>(cinfo.next_scanline) * img.width;
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  std::string out(reinterpret_cast<char*>(mem), mem_size);
  jpeg_destroy_compress(&cinfo);
  std::free(mem);
  return out;
}

inline GrayImage load_image(const std::filesystem::path& path) { return decode_image(read_file(path)); }

inline void save_png(const std::filesystem::path& path, const GrayImage& img) {
  write_file_atomic(path, encode_png(img));
}

}  // namespace muzzle::image
