// Copyright 2026 The voxclass Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Minimal libjpeg wrappers for 8-bit slices. libjpeg reports fatal errors
// through longjmp, so the codec bodies keep only trivially destructible locals.

#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <jpeglib.h>

#include "voxclass/binary_io.hpp"
#include "voxclass/error.hpp"

namespace voxclass {

struct GrayImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;
};

namespace detail {

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

inline void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

inline void jpeg_silent(j_common_ptr) {}

// Luma with Rec.601 weights, rounded to nearest.
inline std::uint8_t rec601_luma(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  const std::uint32_t y = 299u * r + 587u * g + 114u * b;
  return static_cast<std::uint8_t>((y + 500u) / 1000u);
}

// Returns false on failure with `message` filled.
inline bool decode_jpeg_raw(const std::uint8_t* data, std::size_t size, GrayImage* out, std::vector<std::uint8_t>* row,
                            char* message) {
  jpeg_decompress_struct cinfo;
  JpegErrorManager jerr;
  cinfo.err = jpeg_std_error(&jerr.base);
  jerr.base.error_exit = jpeg_error_exit;
  jerr.base.output_message = jpeg_silent;
  jerr.message[0] = '\0';
  if (setjmp(jerr.jump)) {
    std::snprintf(message, JMSG_LENGTH_MAX, "%s", jerr.message);
    jpeg_destroy_decompress(&cinfo);
    return false;
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, data, static_cast<unsigned long>(size));
  jpeg_read_header(&cinfo, TRUE);
  const bool gray = cinfo.num_components == 1;
  cinfo.out_color_space = gray ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_start_decompress(&cinfo);
  out->height = cinfo.output_height;
  out->width = cinfo.output_width;
  out->pixels.resize(out->height * out->width);
  row->resize(static_cast<std::size_t>(cinfo.output_width) * cinfo.output_components);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW rows[1] = {row->data()};
    const std::size_t y = cinfo.output_scanline;
    jpeg_read_scanlines(&cinfo, rows, 1);
    std::uint8_t* dst = out->pixels.data() + y * out->width;
    if (gray) {
      for (std::size_t x = 0; x < out->width; ++x) dst[x] = (*row)[x];
    } else {
      for (std::size_t x = 0; x < out->width; ++x)
        dst[x] = rec601_luma((*row)[3 * x], (*row)[3 * x + 1], (*row)[3 * x + 2]);
    }
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return true;
}

inline bool encode_jpeg_raw(const std::uint8_t* pixels, std::size_t height, std::size_t width, int components,
                            int quality, std::vector<std::uint8_t>* out, char* message) {
  jpeg_compress_struct cinfo;
  JpegErrorManager jerr;
  unsigned char* buffer = nullptr;
  unsigned long buffer_size = 0;
  cinfo.err = jpeg_std_error(&jerr.base);
  jerr.base.error_exit = jpeg_error_exit;
  jerr.base.output_message = jpeg_silent;
  jerr.message[0] = '\0';
  if (setjmp(jerr.jump)) {
    std::snprintf(message, JMSG_LENGTH_MAX, "%s", jerr.message);
    jpeg_destroy_compress(&cinfo);
    std::free(buffer);
    return false;
  }
  jpeg_create_compress(&cinfo);
  jpeg_mem_dest(&cinfo, &buffer, &buffer_size);
  cinfo.image_width = static_cast<JDIMENSION>(width);
  cinfo.image_height = static_cast<JDIMENSION>(height);
  cinfo.input_components = components;
  cinfo.in_color_space = components == 1 ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    JSAMPROW rows[1] = {const_cast<std::uint8_t*>(pixels) + cinfo.next_scanline * width * components};
    jpeg_write_scanlines(&cinfo, rows, 1);
  }
  jpeg_finish_compress(&cinfo);
  out->assign(buffer, buffer + buffer_size);
  jpeg_destroy_compress(&cinfo);
  std::free(buffer);
  return true;
}

}  // namespace detail

inline GrayImage decode_jpeg(std::span<const std::uint8_t> bytes, const std::string& name) {
  GrayImage img;
  std::vector<std::uint8_t> row;
  char message[JMSG_LENGTH_MAX] = {};
  if (bytes.empty() || !detail::decode_jpeg_raw(bytes.data(), bytes.size(), &img, &row, message))
    fail(ErrorKind::decode, "cannot decode image '" + name + "': " + (bytes.empty() ? "empty file" : message));
  return img;
}

inline GrayImage read_jpeg(const std::filesystem::path& path) {
  return decode_jpeg(read_file_bytes(path), path.string());
}

/// `components` is 1 (grayscale) or 3 (interleaved RGB).
inline std::vector<std::uint8_t> encode_jpeg(std::span<const std::uint8_t> pixels, std::size_t height,
                                             std::size_t width, int components = 1, int quality = 95) {
  if (pixels.size() != height * width * static_cast<std::size_t>(components))
    fail(ErrorKind::shape, "pixel buffer does not match image size");
  std::vector<std::uint8_t> out;
  char message[JMSG_LENGTH_MAX] = {};
  if (!detail::encode_jpeg_raw(pixels.data(), height, width, components, quality, &out, message))
    fail(ErrorKind::io, std::string("JPEG encoding failed: ") + message);
  return out;
}

}  // namespace voxclass
