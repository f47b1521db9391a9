#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "u2flow/flo_io.hpp"
#include "u2flow/geometry.hpp"
#include "u2flow/image.hpp"
#include "u2flow/png_io.hpp"

// Synthetic layered scenes with analytically exact ground truth. Each layer
// carries a procedural texture sampled in its own model coordinates, so a
// world point keeps its exact color as the layer moves: brightness
// constancy holds by construction, and flow/occlusion/region rasters come
// from the layer transforms rather than from rendered pixels.

namespace u2flow {

struct SynthConfig {
  int size = 64;
  int channels = 3;
  int min_objects = 2, max_objects = 3;
  double motion_min = 1.0, motion_max = 6.0;  // translation magnitude, px
  double bg_motion_scale = 0.5;     // background moves slower than objects
  double object_rot_max_deg = 4.0;  // extra affine motion (zero for triples)
  double object_scale_jitter = 0.04;
  bool bg_homography = false;  // small projective background motion
  double obj_radius_min = 0.14, obj_radius_max = 0.30;  // fraction of size
  double noise_sigma = 0.0;    // sensor noise on every frame
  bool corrupt_next = false;   // photometric corruption on the next frame
  double corrupt_strength = 0.6;

  void validate() const {
    detail::require(size >= 16, "SynthConfig: size too small");
    detail::require(channels == 1 || channels == 3,
                    "SynthConfig: channels must be 1 or 3");
    detail::require(min_objects >= 0 && max_objects >= min_objects,
                    "SynthConfig: bad object counts");
    detail::require(motion_min >= 0 && motion_max >= motion_min,
                    "SynthConfig: bad motion bounds");
    detail::require(motion_max <= size / 2.0,
                    "SynthConfig: motion bounds exceed image size");
    detail::require(obj_radius_min > 0 && obj_radius_max >= obj_radius_min &&
                        obj_radius_max < 0.5,
                    "SynthConfig: bad object radius bounds");
  }
};

// Frames around time t; flows leave from the center frame (flow_bwd is the
// reverse pair flow, next -> cur). Regions are the layers visible in the
// center frame (index 0 = background), pairwise disjoint by construction.
struct SynthSample {
  RasterImage img_prev, img_cur, img_next;
  FlowField flow_fwd;   // cur -> next
  FlowField flow_bwd;   // next -> cur
  FlowField flow_prev;  // cur -> prev
  MaskImage occ_fwd;    // cur pixel not visible in next
  MaskImage occ_bwd;    // next pixel not visible in cur
  MaskImage occ_prev;   // cur pixel not visible in prev
  std::vector<MaskImage> regions;
  uint64_t seed = 0;
};

namespace detail {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline double lattice_value(uint64_t seed, int64_t ix, int64_t iy) {
  uint64_t h = splitmix64(seed ^ splitmix64(static_cast<uint64_t>(ix) ^
                                            (static_cast<uint64_t>(iy) << 32)));
  return static_cast<double>(h >> 11) * (1.0 / 9007199254740992.0);  // [0,1)
}

// C1 value noise: lattice hash values, smoothstep-blended. Defined on all
// of R^2, so layers can be sampled at any model coordinate.
inline double value_noise(uint64_t seed, double x, double y) {
  const double fx = std::floor(x), fy = std::floor(y);
  const int64_t ix = static_cast<int64_t>(fx), iy = static_cast<int64_t>(fy);
  double tx = x - fx, ty = y - fy;
  tx = tx * tx * (3 - 2 * tx);
  ty = ty * ty * (3 - 2 * ty);
  const double v00 = lattice_value(seed, ix, iy);
  const double v01 = lattice_value(seed, ix + 1, iy);
  const double v10 = lattice_value(seed, ix, iy + 1);
  const double v11 = lattice_value(seed, ix + 1, iy + 1);
  const double top = v00 + tx * (v01 - v00);
  const double bot = v10 + tx * (v11 - v10);
  return top + ty * (bot - top);
}

inline double fractal_noise(uint64_t seed, double x, double y,
                            double base_freq, int octaves) {
  double sum = 0, amp = 1, norm = 0, freq = base_freq;
  for (int o = 0; o < octaves; ++o) {
    sum += amp * value_noise(seed + static_cast<uint64_t>(o) * 7919, x * freq,
                             y * freq);
    norm += amp;
    amp *= 0.5;
    freq *= 2.0;
  }
  return sum / norm;
}

struct TextureParams {
  uint64_t seed = 0;
  double base_freq = 0.06;
  int octaves = 3;
  std::array<double, 3> tint_lo = {0, 0, 0};
  std::array<double, 3> tint_hi = {1, 1, 1};
};

inline void texture_color(const TextureParams& tex, double x, double y,
                          int channels, float* out) {
  const double n = fractal_noise(tex.seed, x, y, tex.base_freq, tex.octaves);
  for (int c = 0; c < channels; ++c) {
    // Base ramp along the tint line plus a faint per-channel field so the
    // channels are not collinear.
    const double wiggle =
        0.08 * (fractal_noise(tex.seed + 131 * (c + 1), x, y,
                              tex.base_freq * 2.3, 2) -
                0.5);
    double v = tex.tint_lo[static_cast<size_t>(c)] +
               (tex.tint_hi[static_cast<size_t>(c)] -
                tex.tint_lo[static_cast<size_t>(c)]) *
                   n +
               wiggle;
    out[c] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
}

struct Layer {
  bool is_background = false;
  std::vector<Vec2> poly;  // model coords; empty for background
  // world_from_model for frames prev / cur / next.
  std::array<Homography33, 3> pose;
  std::array<Homography33, 3> pose_inv;
  TextureParams tex;

  bool contains(int frame, double x, double y) const {
    if (is_background) return true;
    const Vec2 m = pose_inv[static_cast<size_t>(frame)].apply(x, y);
    return point_in_convex_poly(poly, m.x, m.y);
  }
};

struct Scene {
  std::vector<Layer> layers;  // [0] background, then objects bottom to top
  int size = 0;

  // Topmost layer covering (x, y) at `frame`.
  int top_layer(int frame, double x, double y) const {
    for (int i = static_cast<int>(layers.size()) - 1; i >= 0; --i)
      if (layers[static_cast<size_t>(i)].contains(frame, x, y)) return i;
    return 0;
  }

  Vec2 map_point(int layer, int from, int to, double x, double y) const {
    const Layer& L = layers[static_cast<size_t>(layer)];
    const Vec2 m = L.pose_inv[static_cast<size_t>(from)].apply(x, y);
    return L.pose[static_cast<size_t>(to)].apply(m);
  }

  bool in_canvas(const Vec2& p) const {
    return p.x >= 0 && p.x <= size - 1 && p.y >= 0 && p.y <= size - 1;
  }
};

enum Frame { kPrev = 0, kCur = 1, kNext = 2 };

inline RasterImage render_frame(const Scene& scene, int frame, int channels) {
  RasterImage img(scene.size, scene.size, channels);
  float px[3];
  for (int y = 0; y < scene.size; ++y)
    for (int x = 0; x < scene.size; ++x) {
      const int li = scene.top_layer(frame, x, y);
      const Layer& L = scene.layers[static_cast<size_t>(li)];
      const Vec2 m = L.pose_inv[static_cast<size_t>(frame)].apply(x, y);
      texture_color(L.tex, m.x, m.y, channels, px);
      for (int c = 0; c < channels; ++c) img.at(y, x, c) = px[c];
    }
  return img;
}

// Flow `from`->`to` plus the exact occlusion mask: a pixel is occluded when
// its layer's target point leaves the canvas or is covered by a different
// layer at the target frame.
inline void render_flow(const Scene& scene, int from, int to, FlowField* flow,
                        MaskImage* occ) {
  *flow = FlowField(scene.size, scene.size);
  *occ = MaskImage(scene.size, scene.size);
  for (int y = 0; y < scene.size; ++y)
    for (int x = 0; x < scene.size; ++x) {
      const int li = scene.top_layer(from, x, y);
      const Vec2 q = scene.map_point(li, from, to, x, y);
      flow->u(y, x) = static_cast<float>(q.x - x);
      flow->v(y, x) = static_cast<float>(q.y - y);
      if (!scene.in_canvas(q) || scene.top_layer(to, q.x, q.y) != li)
        occ->at(y, x) = 1;
    }
}

inline std::vector<MaskImage> render_regions(const Scene& scene) {
  std::vector<MaskImage> regions(scene.layers.size());
  for (auto& r : regions) r = MaskImage(scene.size, scene.size);
  for (int y = 0; y < scene.size; ++y)
    for (int x = 0; x < scene.size; ++x)
      regions[static_cast<size_t>(scene.top_layer(kCur, x, y))].at(y, x) = 1;
  return regions;
}

inline TextureParams random_texture(std::mt19937_64& rng, bool background) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  TextureParams tex;
  tex.seed = rng();
  tex.base_freq = background ? 0.05 + 0.04 * u01(rng) : 0.08 + 0.08 * u01(rng);
  tex.octaves = 3;
  for (int c = 0; c < 3; ++c) {
    tex.tint_lo[static_cast<size_t>(c)] = 0.45 * u01(rng);
    tex.tint_hi[static_cast<size_t>(c)] = 0.55 + 0.45 * u01(rng);
  }
  return tex;
}

// pose(cur) fixed; prev/next from one per-layer step transform V
// (world at t -> world at t+1), applied as V^-1 and V: constant velocity.
inline void set_poses(Layer* layer, const Homography33& cur_pose,
                      const Homography33& step) {
  layer->pose[kCur] = cur_pose;
  layer->pose[kNext] = step.compose(cur_pose);
  layer->pose[kPrev] = step.inverse().compose(cur_pose);
  for (int f = 0; f < 3; ++f)
    layer->pose_inv[static_cast<size_t>(f)] =
        layer->pose[static_cast<size_t>(f)].inverse();
}

inline void add_sensor_noise(RasterImage* img, double sigma,
                             std::mt19937_64& rng) {
  if (sigma <= 0) return;
  std::normal_distribution<double> n(0.0, sigma);
  for (auto& v : img->data)
    v = static_cast<float>(
        std::clamp(static_cast<double>(v) + n(rng), 0.0, 1.0));
}

// Brightness ramp plus strong noise inside a seeded disk. Ground truth is
// left untouched: the corruption violates brightness constancy on purpose.
inline void corrupt_region(RasterImage* img, double strength,
                           std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double cx = (0.25 + 0.5 * u01(rng)) * img->width;
  const double cy = (0.25 + 0.5 * u01(rng)) * img->height;
  const double radius = (0.18 + 0.17 * u01(rng)) * img->width;
  const double sign = u01(rng) < 0.5 ? -1.0 : 1.0;
  std::normal_distribution<double> noise(0.0, 0.45 * strength);
  for (int y = 0; y < img->height; ++y)
    for (int x = 0; x < img->width; ++x) {
      const double d = std::hypot(x - cx, y - cy);
      if (d > radius) continue;
      const double ramp = sign * strength * 0.55 * (1.0 - d / radius);
      const double grain = noise(rng);
      for (int c = 0; c < img->channels; ++c) {
        float& v = img->at(y, x, c);
        v = static_cast<float>(
            std::clamp(static_cast<double>(v) + ramp + grain, 0.0, 1.0));
      }
    }
}

inline Scene build_scene(uint64_t seed, const SynthConfig& cfg,
                         bool linear_motion) {
  std::mt19937_64 rng(splitmix64(seed ^ 0x5CE41ull));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  Scene scene;
  scene.size = cfg.size;

  // Translations and centers are rounded to float so that small-integer
  // pixel coordinates combine with them exactly in double; for
  // translation-only scenes this makes flow_prev the bitwise negation of
  // flow_fwd after the float cast.
  auto roundf_d = [](double v) { return static_cast<double>(static_cast<float>(v)); };
  auto sample_translation = [&](double scale) {
    const double ang = 2.0 * M_PI * u01(rng);
    const double mag =
        (cfg.motion_min + (cfg.motion_max - cfg.motion_min) * u01(rng)) *
        scale;
    return Vec2{roundf_d(mag * std::cos(ang)), roundf_d(mag * std::sin(ang))};
  };

  // Background.
  {
    Layer bg;
    bg.is_background = true;
    bg.tex = random_texture(rng, true);
    const Vec2 t = sample_translation(cfg.bg_motion_scale);
    Homography33 step;
    if (linear_motion) {
      step = Homography33::from_affine(Affine2::translation(t.x, t.y));
    } else {
      Affine2 rigid = Affine2::rigid_about(
          cfg.size / 2.0, cfg.size / 2.0,
          (u01(rng) - 0.5) * 2.0 * 1.5 * M_PI / 180.0,
          1.0 + (u01(rng) - 0.5) * 0.03);
      Affine2 aff = Affine2::translation(t.x, t.y).compose(rigid);
      step = Homography33::from_affine(aff);
      if (cfg.bg_homography) {
        step.h[6] = (u01(rng) - 0.5) * 4e-4 / cfg.size * 64.0;
        step.h[7] = (u01(rng) - 0.5) * 4e-4 / cfg.size * 64.0;
      }
    }
    set_poses(&bg, Homography33{}, step);
    scene.layers.push_back(std::move(bg));
  }

  // Objects, bottom to top.
  std::uniform_int_distribution<int> count_d(cfg.min_objects, cfg.max_objects);
  const int n_objects = count_d(rng);
  for (int i = 0; i < n_objects; ++i) {
    Layer obj;
    obj.tex = random_texture(rng, false);
    const double radius =
        (cfg.obj_radius_min +
         (cfg.obj_radius_max - cfg.obj_radius_min) * u01(rng)) *
        cfg.size;
    // Convex hull of random points in a disk; almost surely >= 3 vertices.
    do {
      std::vector<Vec2> pts(8);
      for (auto& p : pts) {
        const double ang = 2.0 * M_PI * u01(rng);
        const double r = radius * std::sqrt(0.35 + 0.65 * u01(rng));
        p = {r * std::cos(ang), r * std::sin(ang)};
      }
      obj.poly = convex_hull(pts);
    } while (obj.poly.size() < 3);
    const double cx = roundf_d((0.2 + 0.6 * u01(rng)) * cfg.size);
    const double cy = roundf_d((0.2 + 0.6 * u01(rng)) * cfg.size);
    const Homography33 cur_pose =
        Homography33::from_affine(Affine2::translation(cx, cy));
    const Vec2 t = sample_translation(1.0);
    Affine2 step_aff = Affine2::translation(t.x, t.y);
    if (!linear_motion) {
      const double rot =
          (u01(rng) - 0.5) * 2.0 * cfg.object_rot_max_deg * M_PI / 180.0;
      const double sc = 1.0 + (u01(rng) - 0.5) * 2.0 * cfg.object_scale_jitter;
      step_aff = step_aff.compose(Affine2::rigid_about(cx, cy, rot, sc));
    }
    set_poses(&obj, cur_pose, Homography33::from_affine(step_aff));
    scene.layers.push_back(std::move(obj));
  }
  return scene;
}

inline SynthSample make_sample(uint64_t seed, const SynthConfig& cfg,
                               bool linear_motion) {
  cfg.validate();
  Scene scene = build_scene(seed, cfg, linear_motion);
  SynthSample s;
  s.seed = seed;
  s.img_prev = render_frame(scene, kPrev, cfg.channels);
  s.img_cur = render_frame(scene, kCur, cfg.channels);
  s.img_next = render_frame(scene, kNext, cfg.channels);
  render_flow(scene, kCur, kNext, &s.flow_fwd, &s.occ_fwd);
  render_flow(scene, kNext, kCur, &s.flow_bwd, &s.occ_bwd);
  render_flow(scene, kCur, kPrev, &s.flow_prev, &s.occ_prev);
  s.regions = render_regions(scene);
  std::mt19937_64 post_rng(splitmix64(seed ^ 0xC0FFEEull));
  add_sensor_noise(&s.img_prev, cfg.noise_sigma, post_rng);
  add_sensor_noise(&s.img_cur, cfg.noise_sigma, post_rng);
  add_sensor_noise(&s.img_next, cfg.noise_sigma, post_rng);
  if (cfg.corrupt_next)
    corrupt_region(&s.img_next, cfg.corrupt_strength, post_rng);
  return s;
}

}  // namespace detail

// General scene: objects and background move by small affine (optionally
// projective background) steps.
inline SynthSample generate_sample(uint64_t seed, const SynthConfig& cfg) {
  return detail::make_sample(seed, cfg, false);
}

// Translation-only velocities: flow_prev == -flow_fwd exactly, per pixel.
inline SynthSample generate_linear_triple(uint64_t seed,
                                          const SynthConfig& cfg) {
  return detail::make_sample(seed, cfg, true);
}

inline std::vector<SynthSample> generate_dataset(uint64_t seed, int count,
                                                 const SynthConfig& cfg,
                                                 bool linear_motion = false) {
  std::vector<SynthSample> out;
  out.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i)
    out.push_back(detail::make_sample(
        detail::splitmix64(seed + 0x9E37ull * static_cast<uint64_t>(i + 1)),
        cfg, linear_motion));
  return out;
}

// Directory layout written by the synth CLI and read back by train/eval.
inline void export_sample(const std::string& dir, const SynthSample& s) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  write_png8(dir + "/frame_0000.png", s.img_prev);
  write_png8(dir + "/frame_0001.png", s.img_cur);
  write_png8(dir + "/frame_0002.png", s.img_next);
  write_flo(dir + "/flow_fwd.flo", s.flow_fwd);
  write_flo(dir + "/flow_bwd.flo", s.flow_bwd);
  write_flo(dir + "/flow_prev.flo", s.flow_prev);
  write_mask_png(dir + "/occ_fwd.png", s.occ_fwd);
  write_mask_png(dir + "/occ_bwd.png", s.occ_bwd);
  write_mask_png(dir + "/occ_prev.png", s.occ_prev);
  for (size_t i = 0; i < s.regions.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "/region_%02zu.png", i);
    write_mask_png(dir + name, s.regions[i]);
  }
}

inline SynthSample import_sample(const std::string& dir) {
  namespace fs = std::filesystem;
  SynthSample s;
  s.img_prev = read_png(dir + "/frame_0000.png");
  s.img_cur = read_png(dir + "/frame_0001.png");
  s.img_next = read_png(dir + "/frame_0002.png");
  s.flow_fwd = read_flo(dir + "/flow_fwd.flo");
  s.flow_bwd = read_flo(dir + "/flow_bwd.flo");
  s.flow_prev = read_flo(dir + "/flow_prev.flo");
  s.occ_fwd = read_mask_png(dir + "/occ_fwd.png");
  s.occ_bwd = read_mask_png(dir + "/occ_bwd.png");
  s.occ_prev = read_mask_png(dir + "/occ_prev.png");
  for (int i = 0;; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "/region_%02d.png", i);
    if (!fs::exists(dir + name)) break;
    s.regions.push_back(read_mask_png(dir + name));
  }
  return s;
}

// A dataset directory holds one sample_%04d subdirectory per sample.
inline void export_dataset(const std::string& dir,
                           const std::vector<SynthSample>& data) {
  for (size_t i = 0; i < data.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "/sample_%04zu", i);
    export_sample(dir + name, data[i]);
  }
}

inline std::vector<SynthSample> import_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  std::vector<SynthSample> out;
  for (int i = 0;; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "/sample_%04d", i);
    if (!fs::exists(dir + name)) break;
    out.push_back(import_sample(dir + name));
  }
  detail::require(!out.empty(),
                  "import_dataset: no sample_0000 under " + dir);
  return out;
}

}  // namespace u2flow
