#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "u2flow/error.hpp"
#include "u2flow/image.hpp"
#include "u2flow/png_io.hpp"

// KITTI flow PNGs: 16-bit RGB where channel 0 = u*64 + 2^15,
// channel 1 = v*64 + 2^15, channel 2 = validity (nonzero = valid). The
// encoding quantizes to 1/64 px and covers |component| < 512 px; values
// outside that range cannot be represented and are written as invalid.

namespace u2flow {

inline FlowField read_kitti_png(const std::string& path) {
  Png16 raw = read_png16(path);
  if (raw.channels != 3)
    throw FormatError("KITTI flow PNG must have 3 channels: " + path);
  FlowField f(raw.width, raw.height);
  f.valid.assign(static_cast<size_t>(raw.width) * raw.height, 0);
  for (int64_t p = 0; p < f.pixels(); ++p) {
    const uint16_t* px = raw.data.data() + 3 * p;
    if (px[2] != 0) {
      f.valid[static_cast<size_t>(p)] = 1;
      f.data[static_cast<size_t>(2 * p)] =
          (static_cast<float>(px[0]) - 32768.f) / 64.f;
      f.data[static_cast<size_t>(2 * p + 1)] =
          (static_cast<float>(px[1]) - 32768.f) / 64.f;
    }
  }
  return f;
}

inline void write_kitti_png(const std::string& path, const FlowField& flow) {
  detail::require(flow.width > 0 && flow.height > 0,
                  "write_kitti_png: empty flow");
  std::vector<uint16_t> samples(static_cast<size_t>(flow.width) *
                                flow.height * 3);
  for (int64_t p = 0; p < flow.pixels(); ++p) {
    uint16_t* px = samples.data() + 3 * p;
    const float u = flow.data[static_cast<size_t>(2 * p)];
    const float v = flow.data[static_cast<size_t>(2 * p + 1)];
    const bool in_valid =
        flow.valid.empty() || flow.valid[static_cast<size_t>(p)] != 0;
    const double ru = std::round(static_cast<double>(u) * 64.0) + 32768.0;
    const double rv = std::round(static_cast<double>(v) * 64.0) + 32768.0;
    const bool representable = std::isfinite(u) && std::isfinite(v) &&
                               ru >= 0.0 && ru <= 65535.0 && rv >= 0.0 &&
                               rv <= 65535.0;
    if (in_valid && representable) {
      px[0] = static_cast<uint16_t>(ru);
      px[1] = static_cast<uint16_t>(rv);
      px[2] = 1;
    } else {
      // Out-of-range or non-finite components are flagged invalid rather
      // than silently wrapped.
      px[0] = 32768;
      px[1] = 32768;
      px[2] = 0;
    }
  }
  write_png16(path, flow.width, flow.height, 3, samples);
}

}  // namespace u2flow
