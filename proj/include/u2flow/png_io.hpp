#pragma once

#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "u2flow/error.hpp"
#include "u2flow/image.hpp"

// libpng wrappers. libpng reports errors by longjmp; every entry point
// traps that and rethrows as FormatError. Mutable C++ buffers live behind a
// pointer fixed before setjmp so nothing indeterminate is touched on the
// failure path.

namespace u2flow {

struct Png16 {
  int width = 0, height = 0, channels = 0;
  std::vector<uint16_t> data;  // interleaved, host byte order
};

namespace detail {

struct PngBuffers {
  std::vector<uint8_t> bytes;
  std::vector<png_bytep> rows;
  int width = 0, height = 0, channels = 0, bit_depth = 0;
};

// Silent handlers: errors unwind via longjmp and surface as FormatError;
// warnings are ignored.
inline void png_error_handler(png_structp png, png_const_charp) {
  longjmp(png_jmpbuf(png), 1);
}
inline void png_warning_handler(png_structp, png_const_charp) {}

// Decodes any readable PNG to packed 8- or 16-bit samples (palette and
// sub-byte depths expanded, 16-bit byte-swapped to host order).
inline std::unique_ptr<PngBuffers> decode_png(const std::string& path) {
  std::FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw FormatError("cannot open " + path);
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr,
                             detail::png_error_handler,
                             detail::png_warning_handler);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw FormatError("libpng init failed");
  }
  auto buffers = std::make_unique<PngBuffers>();
  bool failed = false;
  if (setjmp(png_jmpbuf(png))) {
    failed = true;
  } else {
    png_init_io(png, fp);
    png_read_png(png, info,
                 PNG_TRANSFORM_PACKING | PNG_TRANSFORM_EXPAND |
                     PNG_TRANSFORM_SWAP_ENDIAN,
                 nullptr);
    const png_uint_32 w = png_get_image_width(png, info);
    const png_uint_32 h = png_get_image_height(png, info);
    const int channels = png_get_channels(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (w == 0 || h == 0 || w > (1u << 16) || h > (1u << 16) ||
        (depth != 8 && depth != 16)) {
      failed = true;
    } else {
      buffers->width = static_cast<int>(w);
      buffers->height = static_cast<int>(h);
      buffers->channels = channels;
      buffers->bit_depth = depth;
      const size_t row_bytes = png_get_rowbytes(png, info);
      buffers->bytes.resize(row_bytes * h);
      png_bytep* rows = png_get_rows(png, info);
      for (png_uint_32 y = 0; y < h; ++y)
        std::copy(rows[y], rows[y] + row_bytes,
                  buffers->bytes.data() + row_bytes * y);
    }
  }
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  if (failed) throw FormatError("malformed PNG: " + path);
  return buffers;
}

inline int color_type_for(int channels) {
  switch (channels) {
    case 1: return PNG_COLOR_TYPE_GRAY;
    case 2: return PNG_COLOR_TYPE_GRAY_ALPHA;
    case 3: return PNG_COLOR_TYPE_RGB;
    case 4: return PNG_COLOR_TYPE_RGB_ALPHA;
    default: throw ContractError("png: unsupported channel count");
  }
}

inline void encode_png(const std::string& path, int width, int height,
                       int channels, int bit_depth, const uint8_t* samples) {
  std::FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw FormatError("cannot open for write: " + path);
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr,
                              png_error_handler, png_warning_handler);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw FormatError("libpng init failed");
  }
  const size_t row_bytes =
      static_cast<size_t>(width) * channels * (bit_depth / 8);
  auto rows = std::make_unique<std::vector<png_bytep>>(
      static_cast<size_t>(height));
  for (int y = 0; y < height; ++y)
    (*rows)[static_cast<size_t>(y)] =
        const_cast<png_bytep>(samples + row_bytes * static_cast<size_t>(y));
  bool failed = false;
  if (setjmp(png_jmpbuf(png))) {
    failed = true;
  } else {
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(width),
                 static_cast<png_uint_32>(height), bit_depth,
                 color_type_for(channels), PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_set_rows(png, info, rows->data());
    png_write_png(png, info,
                  bit_depth == 16 ? PNG_TRANSFORM_SWAP_ENDIAN
                                  : PNG_TRANSFORM_IDENTITY,
                  nullptr);
  }
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
  if (failed) throw FormatError("PNG write failed: " + path);
}

}  // namespace detail

// Any readable PNG as floats in [0,1].
inline RasterImage read_png(const std::string& path) {
  auto buf = detail::decode_png(path);
  RasterImage img(buf->width, buf->height, buf->channels);
  const size_t n = img.data.size();
  if (buf->bit_depth == 8) {
    for (size_t i = 0; i < n; ++i)
      img.data[i] = static_cast<float>(buf->bytes[i]) / 255.f;
  } else {
    const uint16_t* p = reinterpret_cast<const uint16_t*>(buf->bytes.data());
    for (size_t i = 0; i < n; ++i)
      img.data[i] = static_cast<float>(p[i]) / 65535.f;
  }
  return img;
}

// Raw 16-bit samples; rejects other depths.
inline Png16 read_png16(const std::string& path) {
  auto buf = detail::decode_png(path);
  if (buf->bit_depth != 16)
    throw FormatError("expected 16-bit PNG: " + path);
  Png16 out;
  out.width = buf->width;
  out.height = buf->height;
  out.channels = buf->channels;
  const uint16_t* p = reinterpret_cast<const uint16_t*>(buf->bytes.data());
  out.data.assign(p, p + static_cast<size_t>(out.width) * out.height *
                          out.channels);
  return out;
}

// 8-bit write; values clamped to [0,1] then rounded.
inline void write_png8(const std::string& path, const RasterImage& img) {
  detail::require(img.width > 0 && img.height > 0, "write_png8: empty image");
  std::vector<uint8_t> bytes(img.data.size());
  for (size_t i = 0; i < bytes.size(); ++i) {
    float v = img.data[i];
    v = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
    bytes[i] = static_cast<uint8_t>(std::lround(v * 255.f));
  }
  detail::encode_png(path, img.width, img.height, img.channels, 8,
                     bytes.data());
}

inline void write_png16(const std::string& path, int width, int height,
                        int channels, const std::vector<uint16_t>& samples) {
  detail::require(static_cast<size_t>(width) * height * channels ==
                      samples.size(),
                  "write_png16: sample count mismatch");
  detail::encode_png(path, width, height, channels, 16,
                     reinterpret_cast<const uint8_t*>(samples.data()));
}

// Masks as 8-bit gray, set pixels = 255.
inline void write_mask_png(const std::string& path, const MaskImage& mask) {
  RasterImage img(mask.width, mask.height, 1);
  for (size_t i = 0; i < mask.data.size(); ++i)
    img.data[i] = mask.data[i] ? 1.f : 0.f;
  write_png8(path, img);
}

inline MaskImage read_mask_png(const std::string& path) {
  RasterImage img = read_png(path);
  if (img.channels != 1) throw FormatError("mask PNG must be gray: " + path);
  MaskImage m(img.width, img.height);
  for (size_t i = 0; i < m.data.size(); ++i)
    m.data[i] = img.data[i] > 0.5f ? 1 : 0;
  return m;
}

}  // namespace u2flow
