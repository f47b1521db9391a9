#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "u2flow/error.hpp"
#include "u2flow/image.hpp"

// Middlebury .flo: float magic 202021.25 (bytes "PIEH"), int32 width,
// int32 height, then float32 row-major payload, all little-endian. The
// standard payload is 2 interleaved channels (u,v); this library also uses
// a 1-channel variant for scalar rasters (uncertainty), sharing the header.
// The two are distinguished purely by payload size, so readers must say
// which they expect.

namespace u2flow {

static_assert(std::endian::native == std::endian::little,
              "flo io assumes a little-endian host");

namespace detail {

constexpr float kFloMagic = 202021.25f;
constexpr int kFloMaxDim = 1 << 16;

inline std::vector<char> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  in.seekg(0, std::ios::end);
  const std::streamoff len = in.tellg();
  in.seekg(0, std::ios::beg);
  std::vector<char> buf(static_cast<size_t>(len));
  if (len > 0) in.read(buf.data(), len);
  if (!in) throw FormatError("read failed: " + path);
  return buf;
}

// Parses the 12-byte header and checks the payload holds exactly
// width*height*channels floats.
inline void parse_flo_header(const std::vector<char>& buf,
                             const std::string& path, int channels,
                             int* width, int* height) {
  if (buf.size() < 12) throw FormatError("flo header truncated: " + path);
  float magic;
  int32_t w, h;
  std::memcpy(&magic, buf.data(), 4);
  std::memcpy(&w, buf.data() + 4, 4);
  std::memcpy(&h, buf.data() + 8, 4);
  if (magic != kFloMagic) throw FormatError("bad flo magic: " + path);
  if (w <= 0 || h <= 0 || w > kFloMaxDim || h > kFloMaxDim)
    throw FormatError("bad flo dimensions: " + path);
  const size_t expect =
      12 + static_cast<size_t>(w) * h * channels * sizeof(float);
  if (buf.size() != expect)
    throw FormatError("flo payload size mismatch (expected " +
                      std::to_string(channels) + "-channel): " + path);
  *width = w;
  *height = h;
}

}  // namespace detail

inline void write_flo(const std::string& path, const FlowField& flow) {
  detail::require(flow.width > 0 && flow.height > 0, "write_flo: empty flow");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open for write: " + path);
  const int32_t w = flow.width, h = flow.height;
  out.write(reinterpret_cast<const char*>(&detail::kFloMagic), 4);
  out.write(reinterpret_cast<const char*>(&w), 4);
  out.write(reinterpret_cast<const char*>(&h), 4);
  out.write(reinterpret_cast<const char*>(flow.data.data()),
            static_cast<std::streamsize>(flow.data.size() * sizeof(float)));
  if (!out) throw FormatError("write failed: " + path);
}

inline FlowField read_flo(const std::string& path) {
  auto buf = detail::read_file_bytes(path);
  int w = 0, h = 0;
  detail::parse_flo_header(buf, path, 2, &w, &h);
  FlowField f(w, h);
  std::memcpy(f.data.data(), buf.data() + 12, f.data.size() * sizeof(float));
  return f;
}

// Scalar variant: same header, one float per pixel.
inline void write_flo_scalar(const std::string& path, const ScalarMap& map) {
  detail::require(map.width > 0 && map.height > 0,
                  "write_flo_scalar: empty map");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open for write: " + path);
  const int32_t w = map.width, h = map.height;
  out.write(reinterpret_cast<const char*>(&detail::kFloMagic), 4);
  out.write(reinterpret_cast<const char*>(&w), 4);
  out.write(reinterpret_cast<const char*>(&h), 4);
  out.write(reinterpret_cast<const char*>(map.data.data()),
            static_cast<std::streamsize>(map.data.size() * sizeof(float)));
  if (!out) throw FormatError("write failed: " + path);
}

inline ScalarMap read_flo_scalar(const std::string& path) {
  auto buf = detail::read_file_bytes(path);
  int w = 0, h = 0;
  detail::parse_flo_header(buf, path, 1, &w, &h);
  ScalarMap m(w, h);
  std::memcpy(m.data.data(), buf.data() + 12, m.data.size() * sizeof(float));
  return m;
}

}  // namespace u2flow
