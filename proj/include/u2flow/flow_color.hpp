#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "u2flow/image.hpp"

// Classic Middlebury flow colorization: 55-entry hue wheel indexed by flow
// direction, saturation by magnitude. Zero flow renders white, invalid
// pixels black.

namespace u2flow {

inline const std::vector<std::array<float, 3>>& flow_color_wheel() {
  static const std::vector<std::array<float, 3>> wheel = [] {
    const int RY = 15, YG = 6, GC = 4, CB = 11, BM = 13, MR = 6;
    std::vector<std::array<float, 3>> w;
    w.reserve(RY + YG + GC + CB + BM + MR);
    for (int i = 0; i < RY; ++i)
      w.push_back({1.f, static_cast<float>(i) / RY, 0.f});
    for (int i = 0; i < YG; ++i)
      w.push_back({1.f - static_cast<float>(i) / YG, 1.f, 0.f});
    for (int i = 0; i < GC; ++i)
      w.push_back({0.f, 1.f, static_cast<float>(i) / GC});
    for (int i = 0; i < CB; ++i)
      w.push_back({0.f, 1.f - static_cast<float>(i) / CB, 1.f});
    for (int i = 0; i < BM; ++i)
      w.push_back({static_cast<float>(i) / BM, 0.f, 1.f});
    for (int i = 0; i < MR; ++i)
      w.push_back({1.f, 0.f, 1.f - static_cast<float>(i) / MR});
    return w;
  }();
  return wheel;
}

// max_radius <= 0 auto-scales to the largest valid magnitude.
inline RasterImage flow_to_color(const FlowField& flow,
                                 double max_radius = 0.0) {
  const auto& wheel = flow_color_wheel();
  const int ncols = static_cast<int>(wheel.size());
  if (max_radius <= 0.0) {
    for (int y = 0; y < flow.height; ++y)
      for (int x = 0; x < flow.width; ++x) {
        if (!flow.is_valid(y, x)) continue;
        const double r = std::hypot(flow.u(y, x), flow.v(y, x));
        if (r > max_radius) max_radius = r;
      }
    if (max_radius <= 0.0) max_radius = 1.0;
  }
  RasterImage img(flow.width, flow.height, 3);
  for (int y = 0; y < flow.height; ++y)
    for (int x = 0; x < flow.width; ++x) {
      if (!flow.is_valid(y, x)) continue;  // stays black
      const double u = flow.u(y, x) / max_radius;
      const double v = flow.v(y, x) / max_radius;
      const double rad = std::hypot(u, v);
      const double a = std::atan2(-v, -u) / M_PI;
      const double fk = (a + 1.0) / 2.0 * (ncols - 1);
      int k0 = static_cast<int>(std::floor(fk));
      if (k0 >= ncols) k0 = ncols - 1;
      const int k1 = (k0 + 1) % ncols;
      const double f = fk - k0;
      for (int b = 0; b < 3; ++b) {
        double col = (1.0 - f) * wheel[static_cast<size_t>(k0)]
                                      [static_cast<size_t>(b)] +
                     f * wheel[static_cast<size_t>(k1)][static_cast<size_t>(b)];
        if (rad <= 1.0)
          col = 1.0 - rad * (1.0 - col);  // desaturate toward white
        else
          col *= 0.75;  // out of range: dim
        img.at(y, x, b) = static_cast<float>(col);
      }
    }
  return img;
}

}  // namespace u2flow
