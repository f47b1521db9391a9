#pragma once

// Appearance + spatial augmentation producing the augmented image pair, the
// transformed pseudo-ground-truth flow, and the transformed occlusion mask
// that drive the consistency residual. Everything here is plain float: the
// pseudo-ground-truth side is a frozen teacher, gradients only enter through
// the model's predictions on the augmented images.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "u2flow/error.hpp"
#include "u2flow/geometry.hpp"
#include "u2flow/image.hpp"

namespace u2flow {

struct EraseRect {
  float fx = 0, fy = 0, fw = 0, fh = 0;  // fractions of width/height
};

struct AppearanceParams {
  float brightness = 1;  // multiplicative gain
  float contrast = 1;    // scale around the mean intensity
  float saturation = 1;  // scale around per-pixel gray
  float hue = 0;         // chroma rotation, radians (3-channel only)
  float noise_sigma = 0;
  float blur_sigma = 0;
  std::vector<EraseRect> erase;  // applied to the second image only
  uint64_t noise_seed = 0;
};

struct SpatialParams {
  double angle = 0;  // radians, about the image center
  double scale = 1;  // isotropic
  double tx = 0, ty = 0;
};

struct AugmentSpec {
  AppearanceParams appearance;
  SpatialParams spatial;
};

struct AugmentBounds {
  float brightness = 0, contrast = 0, saturation = 0, hue = 0;
  float noise_sigma = 0, blur_sigma = 0;
  int erase_count = 0;
  float erase_min_frac = 0.06f, erase_max_frac = 0.25f;
  double translate_frac = 0, rotate_max_deg = 0, scale_jitter = 0;

  void validate() const {
    detail::require(brightness >= 0 && contrast >= 0 && saturation >= 0 &&
                        hue >= 0 && noise_sigma >= 0 && blur_sigma >= 0,
                    "AugmentBounds: appearance bounds must be >= 0");
    detail::require(erase_count >= 0 && erase_min_frac >= 0 &&
                        erase_max_frac >= erase_min_frac &&
                        erase_max_frac <= 1,
                    "AugmentBounds: bad erase bounds");
    detail::require(translate_frac >= 0 && rotate_max_deg >= 0 &&
                        scale_jitter >= 0 && scale_jitter < 1,
                    "AugmentBounds: bad spatial bounds");
  }
};

struct AugmentedBatch {
  RasterImage img1, img2;
  FlowField flow;  // pseudo-ground-truth on the augmented grid
  MaskImage occ;   // warped occlusion | out-of-canvas | erased
};

// Spatial and appearance parts are drawn from independently derived
// generators, so widening one group of bounds never shifts the other draw.
inline AugmentSpec sample_spec(uint64_t seed, const AugmentBounds& b) {
  b.validate();
  AugmentSpec s;
  std::mt19937_64 spatial_rng(seed ^ 0x53504154ull);
  std::mt19937_64 appear_rng(seed ^ 0x41505045ull);
  auto uni = [](std::mt19937_64& r, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(r);
  };
  s.spatial.angle =
      uni(spatial_rng, -b.rotate_max_deg, b.rotate_max_deg) * M_PI / 180.0;
  s.spatial.scale = uni(spatial_rng, 1 - b.scale_jitter, 1 + b.scale_jitter);
  s.spatial.tx = uni(spatial_rng, -b.translate_frac, b.translate_frac);
  s.spatial.ty = uni(spatial_rng, -b.translate_frac, b.translate_frac);

  auto& ar = appear_rng;
  s.appearance.brightness =
      static_cast<float>(uni(ar, 1 - b.brightness, 1 + b.brightness));
  s.appearance.contrast =
      static_cast<float>(uni(ar, 1 - b.contrast, 1 + b.contrast));
  s.appearance.saturation =
      static_cast<float>(uni(ar, 1 - b.saturation, 1 + b.saturation));
  s.appearance.hue = static_cast<float>(uni(ar, -b.hue, b.hue));
  s.appearance.noise_sigma = static_cast<float>(uni(ar, 0, b.noise_sigma));
  s.appearance.blur_sigma = static_cast<float>(uni(ar, 0, b.blur_sigma));
  const int n_erase =
      b.erase_count > 0
          ? std::uniform_int_distribution<int>(0, b.erase_count)(ar)
          : 0;
  for (int i = 0; i < n_erase; ++i) {
    EraseRect r;
    r.fw = static_cast<float>(uni(ar, b.erase_min_frac, b.erase_max_frac));
    r.fh = static_cast<float>(uni(ar, b.erase_min_frac, b.erase_max_frac));
    r.fx = static_cast<float>(uni(ar, 0, 1 - r.fw));
    r.fy = static_cast<float>(uni(ar, 0, 1 - r.fh));
    s.appearance.erase.push_back(r);
  }
  s.appearance.noise_seed = appear_rng();
  return s;
}

namespace detail {

// T(p) = R(angle)*scale about the center, then translate (pixels).
inline Affine2 spatial_affine(const SpatialParams& sp, int width, int height) {
  const double cx = (width - 1) / 2.0, cy = (height - 1) / 2.0;
  Affine2 t = Affine2::rigid_about(cx, cy, sp.angle, sp.scale);
  t.tx += sp.tx;
  t.ty += sp.ty;
  detail::require(std::abs(t.det()) > 1e-6,
                  "augment: spatial transform not invertible");
  return t;
}

inline float bilinear_at(const RasterImage& img, double x, double y, int c) {
  const int W = img.width, H = img.height;
  x = std::min(std::max(x, 0.0), static_cast<double>(W - 1));
  y = std::min(std::max(y, 0.0), static_cast<double>(H - 1));
  int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
  if (x0 > W - 2) x0 = W > 1 ? W - 2 : 0;
  if (y0 > H - 2) y0 = H > 1 ? H - 2 : 0;
  const int x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
  const float fx = static_cast<float>(x - x0), fy = static_cast<float>(y - y0);
  const float top =
      (1 - fx) * img.at(y0, x0, c) + fx * img.at(y0, x1, c);
  const float bot =
      (1 - fx) * img.at(y1, x0, c) + fx * img.at(y1, x1, c);
  return (1 - fy) * top + fy * bot;
}

inline float bilinear_flow(const FlowField& f, double x, double y, int comp) {
  const int W = f.width, H = f.height;
  x = std::min(std::max(x, 0.0), static_cast<double>(W - 1));
  y = std::min(std::max(y, 0.0), static_cast<double>(H - 1));
  int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
  if (x0 > W - 2) x0 = W > 1 ? W - 2 : 0;
  if (y0 > H - 2) y0 = H > 1 ? H - 2 : 0;
  const int x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
  const float fx = static_cast<float>(x - x0), fy = static_cast<float>(y - y0);
  auto at = [&](int yy, int xx) {
    return f.data[(static_cast<size_t>(yy) * W + xx) * 2 + comp];
  };
  const float top = (1 - fx) * at(y0, x0) + fx * at(y0, x1);
  const float bot = (1 - fx) * at(y1, x0) + fx * at(y1, x1);
  return (1 - fy) * top + fy * bot;
}

inline void gaussian_blur_inplace(RasterImage* img, float sigma) {
  if (sigma <= 0) return;
  const int radius = std::max(1, static_cast<int>(std::ceil(2 * sigma)));
  std::vector<float> k(static_cast<size_t>(radius) + 1);
  float norm = 0;
  for (int i = 0; i <= radius; ++i) {
    k[static_cast<size_t>(i)] =
        std::exp(-0.5f * static_cast<float>(i * i) / (sigma * sigma));
    norm += (i == 0 ? 1.f : 2.f) * k[static_cast<size_t>(i)];
  }
  for (auto& v : k) v /= norm;
  const int W = img->width, H = img->height, C = img->channels;
  RasterImage tmp(W, H, C);
  auto clampi = [](int v, int hi) { return v < 0 ? 0 : (v > hi ? hi : v); };
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < C; ++c) {
        float acc = k[0] * img->at(y, x, c);
        for (int i = 1; i <= radius; ++i)
          acc += k[static_cast<size_t>(i)] *
                 (img->at(y, clampi(x - i, W - 1), c) +
                  img->at(y, clampi(x + i, W - 1), c));
        tmp.at(y, x, c) = acc;
      }
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < C; ++c) {
        float acc = k[0] * tmp.at(y, x, c);
        for (int i = 1; i <= radius; ++i)
          acc += k[static_cast<size_t>(i)] *
                 (tmp.at(clampi(y - i, H - 1), x, c) +
                  tmp.at(clampi(y + i, H - 1), x, c));
        img->at(y, x, c) = acc;
      }
}

// Color jitter, blur, then seeded per-pixel noise; output clamped to [0,1].
inline void apply_appearance(RasterImage* img, const AppearanceParams& ap,
                             uint64_t noise_salt) {
  const int W = img->width, H = img->height, C = img->channels;
  // Brightness gain.
  if (ap.brightness != 1)
    for (auto& v : img->data) v *= ap.brightness;
  // Contrast about the mean intensity.
  if (ap.contrast != 1) {
    double mean = 0;
    for (float v : img->data) mean += v;
    const float m = static_cast<float>(mean / img->data.size());
    for (auto& v : img->data) v = m + (v - m) * ap.contrast;
  }
  if (C == 3) {
    for (int i = 0; i < W * H; ++i) {
      float& r = img->data[static_cast<size_t>(i) * 3];
      float& g = img->data[static_cast<size_t>(i) * 3 + 1];
      float& b = img->data[static_cast<size_t>(i) * 3 + 2];
      if (ap.saturation != 1) {
        const float gray = 0.299f * r + 0.587f * g + 0.114f * b;
        r = gray + (r - gray) * ap.saturation;
        g = gray + (g - gray) * ap.saturation;
        b = gray + (b - gray) * ap.saturation;
      }
      if (ap.hue != 0) {
        // Rotate chroma in YIQ space.
        const float yy = 0.299f * r + 0.587f * g + 0.114f * b;
        const float ii = 0.595716f * r - 0.274453f * g - 0.321263f * b;
        const float qq = 0.211456f * r - 0.522591f * g + 0.311135f * b;
        const float cs = std::cos(ap.hue), sn = std::sin(ap.hue);
        const float i2 = cs * ii - sn * qq, q2 = sn * ii + cs * qq;
        r = yy + 0.9563f * i2 + 0.6210f * q2;
        g = yy - 0.2721f * i2 - 0.6474f * q2;
        b = yy - 1.1070f * i2 + 1.7046f * q2;
      }
    }
  }
  gaussian_blur_inplace(img, ap.blur_sigma);
  if (ap.noise_sigma > 0) {
    std::mt19937_64 rng(ap.noise_seed ^ noise_salt);
    std::normal_distribution<float> n(0.f, ap.noise_sigma);
    for (auto& v : img->data) v += n(rng);
  }
  for (auto& v : img->data) v = std::min(std::max(v, 0.f), 1.f);
}

}  // namespace detail

// Transform the pair, the flow, and the occlusion mask onto the augmented
// grid. Both images get the same spatial transform and the same color
// jitter; per-pixel noise is drawn independently per image and erase
// rectangles hit the second image only. The flow picks up the linear part:
// F_out(q) = A * F(T^-1 q). Occlusion is resampled nearest and grows by
// out-of-canvas pixels and erased rectangles.
inline AugmentedBatch apply_augment(const AugmentSpec& spec,
                                    const RasterImage& img1,
                                    const RasterImage& img2,
                                    const FlowField& flow,
                                    const MaskImage& occ) {
  detail::require(img1.width == img2.width && img1.height == img2.height &&
                      img1.channels == img2.channels,
                  "augment: image shape mismatch");
  detail::require(flow.width == img1.width && flow.height == img1.height &&
                      occ.width == img1.width && occ.height == img1.height,
                  "augment: flow/mask shape mismatch");
  const int W = img1.width, H = img1.height, C = img1.channels;
  const Affine2 t = detail::spatial_affine(spec.spatial, W, H);
  const Affine2 tinv = t.inverse();

  AugmentedBatch out{RasterImage(W, H, C), RasterImage(W, H, C),
                     FlowField(W, H), MaskImage(W, H)};
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const Vec2 p = tinv.apply({static_cast<double>(x),
                                 static_cast<double>(y)});
      const bool inside = p.x >= 0 && p.y >= 0 &&
                          p.x <= static_cast<double>(W - 1) &&
                          p.y <= static_cast<double>(H - 1);
      for (int c = 0; c < C; ++c) {
        out.img1.at(y, x, c) = detail::bilinear_at(img1, p.x, p.y, c);
        out.img2.at(y, x, c) = detail::bilinear_at(img2, p.x, p.y, c);
      }
      const float fu = detail::bilinear_flow(flow, p.x, p.y, 0);
      const float fv = detail::bilinear_flow(flow, p.x, p.y, 1);
      const size_t i = (static_cast<size_t>(y) * W + x) * 2;
      out.flow.data[i] = static_cast<float>(t.a) * fu +
                         static_cast<float>(t.b) * fv;
      out.flow.data[i + 1] = static_cast<float>(t.c) * fu +
                             static_cast<float>(t.d) * fv;
      const int nx = std::min(
          std::max(static_cast<int>(std::lround(p.x)), 0), W - 1);
      const int ny = std::min(
          std::max(static_cast<int>(std::lround(p.y)), 0), H - 1);
      out.occ.at(y, x) = (!inside || occ.at(ny, nx) != 0) ? 1 : 0;
    }
  }

  detail::apply_appearance(&out.img1, spec.appearance, 0x11);
  detail::apply_appearance(&out.img2, spec.appearance, 0x22);

  // Erase rectangles on the second image, filled with its mean color and
  // flagged occluded so they drop out of the masked objectives.
  if (!spec.appearance.erase.empty()) {
    std::vector<float> mean(static_cast<size_t>(C), 0.f);
    for (int i = 0; i < W * H; ++i)
      for (int c = 0; c < C; ++c)
        mean[static_cast<size_t>(c)] +=
            out.img2.data[static_cast<size_t>(i) * C + c];
    for (auto& m : mean) m /= static_cast<float>(W * H);
    for (const auto& r : spec.appearance.erase) {
      const int x0 = static_cast<int>(std::floor(r.fx * W));
      const int y0 = static_cast<int>(std::floor(r.fy * H));
      const int x1 = std::min(W, x0 + std::max(1, static_cast<int>(
                                                      std::ceil(r.fw * W))));
      const int y1 = std::min(H, y0 + std::max(1, static_cast<int>(
                                                      std::ceil(r.fh * H))));
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) {
          for (int c = 0; c < C; ++c)
            out.img2.at(y, x, c) = mean[static_cast<size_t>(c)];
          out.occ.at(y, x) = 1;
        }
    }
  }
  return out;
}

// Per-pixel l1 residual between two flow fields, summed over components.
inline ScalarMap flow_residual_map(const FlowField& a, const FlowField& b) {
  detail::require(a.width == b.width && a.height == b.height,
                  "flow_residual_map: shape mismatch");
  ScalarMap m(a.width, a.height);
  for (size_t i = 0; i < m.data.size(); ++i)
    m.data[i] = std::abs(a.data[2 * i] - b.data[2 * i]) +
                std::abs(a.data[2 * i + 1] - b.data[2 * i + 1]);
  return m;
}

}  // namespace u2flow
