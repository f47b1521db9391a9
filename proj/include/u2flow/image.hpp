#pragma once

#include <cstdint>
#include <vector>

#include "u2flow/error.hpp"
#include "u2flow/tensor.hpp"

// Plain (non-differentiable) raster containers shared by IO, the synthetic
// generator, metrics, and the training harness. Layout is row-major,
// channel-interleaved, matching the (H,W,C) tensor layout.

namespace u2flow {

// Float image, values nominally in [0,1].
struct RasterImage {
  int width = 0, height = 0, channels = 0;
  std::vector<float> data;

  RasterImage() = default;
  RasterImage(int w, int h, int c, float fill = 0.f)
      : width(w), height(h), channels(c),
        data(static_cast<size_t>(w) * h * c, fill) {}

  float& at(int y, int x, int c) {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  float at(int y, int x, int c) const {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  int64_t pixels() const { return static_cast<int64_t>(width) * height; }
};

// Dense 2-channel flow. `valid` is empty (all valid) or one byte per pixel.
struct FlowField {
  int width = 0, height = 0;
  std::vector<float> data;      // interleaved u,v
  std::vector<uint8_t> valid;   // empty => all valid

  FlowField() = default;
  FlowField(int w, int h)
      : width(w), height(h), data(static_cast<size_t>(w) * h * 2, 0.f) {}

  float& u(int y, int x) {
    return data[(static_cast<size_t>(y) * width + x) * 2];
  }
  float& v(int y, int x) {
    return data[(static_cast<size_t>(y) * width + x) * 2 + 1];
  }
  float u(int y, int x) const {
    return data[(static_cast<size_t>(y) * width + x) * 2];
  }
  float v(int y, int x) const {
    return data[(static_cast<size_t>(y) * width + x) * 2 + 1];
  }
  bool is_valid(int y, int x) const {
    return valid.empty() || valid[static_cast<size_t>(y) * width + x] != 0;
  }
  int64_t pixels() const { return static_cast<int64_t>(width) * height; }
};

// Binary mask; nonzero means "set" (occluded / inside region / reliable,
// per use site).
struct MaskImage {
  int width = 0, height = 0;
  std::vector<uint8_t> data;

  MaskImage() = default;
  MaskImage(int w, int h, uint8_t fill = 0)
      : width(w), height(h), data(static_cast<size_t>(w) * h, fill) {}

  uint8_t& at(int y, int x) {
    return data[static_cast<size_t>(y) * width + x];
  }
  uint8_t at(int y, int x) const {
    return data[static_cast<size_t>(y) * width + x];
  }
  bool empty() const { return data.empty(); }
  int64_t count() const {
    int64_t n = 0;
    for (uint8_t v : data) n += v != 0;
    return n;
  }
};

// One float per pixel (uncertainty, EPE, residual rasters).
struct ScalarMap {
  int width = 0, height = 0;
  std::vector<float> data;

  ScalarMap() = default;
  ScalarMap(int w, int h, float fill = 0.f)
      : width(w), height(h), data(static_cast<size_t>(w) * h, fill) {}

  float& at(int y, int x) {
    return data[static_cast<size_t>(y) * width + x];
  }
  float at(int y, int x) const {
    return data[static_cast<size_t>(y) * width + x];
  }
};

// ---- tensor bridging ----

template <typename T>
Tensor<T> tensor_from_image(Graph<T>& g, const RasterImage& img) {
  std::vector<T> v(img.data.begin(), img.data.end());
  return g.constant(Shape{img.height, img.width, img.channels}, std::move(v));
}

template <typename T>
Tensor<T> tensor_from_flow(Graph<T>& g, const FlowField& f) {
  std::vector<T> v(f.data.begin(), f.data.end());
  return g.constant(Shape{f.height, f.width, 2}, std::move(v));
}

template <typename T>
FlowField flow_from_tensor(const Tensor<T>& t) {
  detail::require(t.rank() == 3 && t.dim(2) == 2,
                  "flow_from_tensor: (H,W,2) required");
  FlowField f(t.dim(1), t.dim(0));
  const auto& v = t.values();
  for (size_t i = 0; i < v.size(); ++i) f.data[i] = static_cast<float>(v[i]);
  return f;
}

template <typename T>
ScalarMap scalar_map_from_tensor(const Tensor<T>& t) {
  detail::require(t.rank() == 3 && t.dim(2) == 1,
                  "scalar_map_from_tensor: (H,W,1) required");
  ScalarMap m(t.dim(1), t.dim(0));
  const auto& v = t.values();
  for (size_t i = 0; i < v.size(); ++i) m.data[i] = static_cast<float>(v[i]);
  return m;
}

// Occlusion/validity weights as an (H,W,1) constant: 1 where the mask is
// clear, 0 where set. An empty mask means all ones.
template <typename T>
Tensor<T> inverse_mask_tensor(Graph<T>& g, const MaskImage& mask, int height,
                              int width) {
  std::vector<T> v(static_cast<size_t>(height) * width, T(1));
  if (!mask.empty()) {
    detail::require(mask.width == width && mask.height == height,
                    "inverse_mask_tensor: mask dims mismatch");
    for (size_t i = 0; i < v.size(); ++i)
      if (mask.data[i]) v[i] = T(0);
  }
  return g.constant(Shape{height, width, 1}, std::move(v));
}

}  // namespace u2flow
