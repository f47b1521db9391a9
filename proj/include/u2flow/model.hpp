#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "u2flow/image.hpp"
#include "u2flow/ops.hpp"
#include "u2flow/params.hpp"

// Recurrent flow estimator with a jointly trained per-pixel log-variance.
// Feature/context encoders at a power-of-two stride, an all-pairs
// correlation pyramid, and a ConvGRU that refines flow iteratively. Each
// iteration starts from a detached flow estimate, so a given iteration's
// losses train that iteration's residual (plus trunk) only.
//
// Head structure per iteration, on the GRU state h:
//   f     = C_flow(h)                         motion feature
//   alpha = C_unc(h)                          log variance
//   s     = sigmoid(-alpha)                   confidence gate
//   f~    = f * detach(s)                     gated feature, no grad to C_unc
//   dF    = C_flow'(concat(f, f~, detach(alpha)))
// The gate modulates the flow refinement with confidence while keeping the
// uncertainty and flow objectives decoupled: the uncertainty loss reaches
// C_unc (and the trunk) but not C_flow / C_flow', and the flow losses never
// reach C_unc.

namespace u2flow {

struct ModelConfig {
  int input_channels = 3;
  int feature_dim = 96;    // correlation feature channels
  int hidden_dim = 64;     // GRU state channels
  int context_dim = 64;    // context branch channels
  int motion_dim = 64;     // motion encoder output channels
  int head_dim = 48;       // head hidden width (and gated feature width)
  int feature_stride = 4;  // power of two >= 2
  int corr_levels = 2;
  int corr_radius = 3;
  int iterations = 8;
  // Internal stop-gradients (iteration flow hand-off, confidence gate, and
  // the uncertainty feed into the residual head). Always on for training.
  // Finite-difference checks disable them: central differences perturb the
  // value through blocked paths too, so FD can only validate the adjoints
  // with every path attached; the blocking itself is asserted as exact
  // zeros in the decoupling tests.
  bool detach_internal = true;

  int downs() const {
    int s = feature_stride, n = 0;
    while (s > 1) {
      s /= 2;
      ++n;
    }
    return n;
  }

  void validate() const {
    detail::require(input_channels >= 1, "ModelConfig: bad input_channels");
    detail::require(feature_dim >= 8 && hidden_dim >= 8 && context_dim >= 8 &&
                        motion_dim >= 8 && head_dim >= 8,
                    "ModelConfig: widths too small");
    detail::require(motion_dim > 2, "ModelConfig: motion_dim too small");
    int s = feature_stride;
    while (s > 1 && s % 2 == 0) s /= 2;
    detail::require(s == 1 && feature_stride >= 2,
                    "ModelConfig: feature_stride must be a power of two >= 2");
    detail::require(corr_levels >= 1 && corr_radius >= 1,
                    "ModelConfig: bad correlation pyramid");
    detail::require(iterations >= 1, "ModelConfig: iterations >= 1");
  }

  // Input sizes must land on an even feature grid for every pooled level.
  void validate_input(int height, int width) const {
    const int div = feature_stride * (1 << (corr_levels - 1));
    detail::require(height % div == 0 && width % div == 0,
                    "model: input dims must be divisible by stride * 2^(levels-1)");
  }
};

namespace detail {

inline uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline void add_conv_param(ParamStore* store, const std::string& name, int co,
                           int kh, int kw, int ci, uint64_t seed) {
  store->add(name + ".w", Shape{co, kh, kw, ci},
             uniform_init(Shape{co, kh, kw, ci}, kh * kw * ci,
                          seed ^ fnv1a(name + ".w")));
  store->add(name + ".b", Shape{co},
             std::vector<float>(static_cast<size_t>(co), 0.f));
}

inline void add_norm_param(ParamStore* store, const std::string& name,
                           int channels) {
  store->add(name + ".gamma", Shape{channels},
             std::vector<float>(static_cast<size_t>(channels), 1.f));
  store->add(name + ".beta", Shape{channels},
             std::vector<float>(static_cast<size_t>(channels), 0.f));
}

// Encoder trunk widths: half width while downsampling, full width at the
// stride-resolution tail.
inline int trunk_width(const ModelConfig& cfg) {
  return std::max(16, cfg.feature_dim / 2);
}

}  // namespace detail

inline ParamStore init_model_params(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  ParamStore store;
  const int tw = detail::trunk_width(cfg);
  auto encoder = [&](const std::string& prefix, int out_ch) {
    int ci = cfg.input_channels;
    for (int d = 0; d < cfg.downs(); ++d) {
      const std::string name = prefix + ".down" + std::to_string(d);
      detail::add_conv_param(&store, name, tw, 3, 3, ci, seed);
      detail::add_norm_param(&store, prefix + ".in" + std::to_string(d), tw);
      ci = tw;
    }
    detail::add_conv_param(&store, prefix + ".out", out_ch, 3, 3, ci, seed);
  };
  encoder("fnet", cfg.feature_dim);
  encoder("cnet", cfg.hidden_dim + cfg.context_dim);

  const int corr_ch =
      cfg.corr_levels * (2 * cfg.corr_radius + 1) * (2 * cfg.corr_radius + 1);
  detail::add_conv_param(&store, "menc.corr1", cfg.motion_dim, 1, 1, corr_ch,
                         seed);
  detail::add_conv_param(&store, "menc.corr2", cfg.motion_dim, 3, 3,
                         cfg.motion_dim, seed);
  detail::add_conv_param(&store, "menc.flow1", cfg.motion_dim / 2, 3, 3, 2,
                         seed);
  detail::add_conv_param(&store, "menc.out", cfg.motion_dim - 2, 3, 3,
                         cfg.motion_dim + cfg.motion_dim / 2, seed);

  const int x_ch = cfg.motion_dim + cfg.context_dim;
  detail::add_conv_param(&store, "gru.z", cfg.hidden_dim, 3, 3,
                         cfg.hidden_dim + x_ch, seed);
  detail::add_conv_param(&store, "gru.r", cfg.hidden_dim, 3, 3,
                         cfg.hidden_dim + x_ch, seed);
  detail::add_conv_param(&store, "gru.q", cfg.hidden_dim, 3, 3,
                         cfg.hidden_dim + x_ch, seed);

  detail::add_conv_param(&store, "cflow.c1", cfg.head_dim, 3, 3,
                         cfg.hidden_dim, seed);
  detail::add_conv_param(&store, "cflow.c2", cfg.head_dim, 3, 3, cfg.head_dim,
                         seed);
  detail::add_conv_param(&store, "cunc.c1", cfg.head_dim, 3, 3,
                         cfg.hidden_dim, seed);
  detail::add_conv_param(&store, "cunc.c2", 1, 3, 3, cfg.head_dim, seed);
  detail::add_conv_param(&store, "cflow2.c1", cfg.head_dim, 3, 3,
                         2 * cfg.head_dim + 1, seed);
  detail::add_conv_param(&store, "cflow2.c2", 2, 3, 3, cfg.head_dim, seed);
  return store;
}

// Parameter names owned by the flow-refinement branch vs the uncertainty
// head; the decoupling guarantees are phrased in terms of these sets.
inline bool is_flow_head_param(const std::string& name) {
  return name.rfind("cflow.", 0) == 0 || name.rfind("cflow2.", 0) == 0;
}
inline bool is_uncertainty_head_param(const std::string& name) {
  return name.rfind("cunc.", 0) == 0;
}

namespace detail {

template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                        const Tensor<T>& beta, T eps = T(1e-5)) {
  auto mu = reduce_mean(x, {0, 1}, true);
  auto xc = sub(x, broadcast_to(mu, x.shape()));
  auto var = reduce_mean(mul(xc, xc), {0, 1}, true);
  auto denom = sqrt_op(add_scalar(var, eps));
  auto norm = div(xc, broadcast_to(denom, x.shape()));
  return add(mul(norm, broadcast_to(gamma, x.shape())),
             broadcast_to(beta, x.shape()));
}

template <typename T>
Tensor<T> conv_named(const BoundParams<T>& p, const std::string& name,
                     const Tensor<T>& x, int stride, int pad) {
  return conv2d(x, p(name + ".w"), p(name + ".b"), stride, pad);
}

template <typename T>
Tensor<T> encoder_forward(const BoundParams<T>& p, const ModelConfig& cfg,
                          const std::string& prefix, const Tensor<T>& img) {
  Tensor<T> x = img;
  for (int d = 0; d < cfg.downs(); ++d) {
    x = conv_named(p, prefix + ".down" + std::to_string(d), x, 2, 1);
    const std::string in = prefix + ".in" + std::to_string(d);
    x = instance_norm(x, p(in + ".gamma"), p(in + ".beta"));
    x = relu(x);
  }
  return conv_named(p, prefix + ".out", x, 1, 1);
}

}  // namespace detail

// All-pairs correlation pyramid between stride-resolution feature maps,
// scaled by 1/sqrt(feature_dim). Level l has slices pooled down l times.
template <typename T>
struct CorrPyramid {
  std::vector<Tensor<T>> levels;  // each (H'*W', h_l, w_l)
};

template <typename T>
CorrPyramid<T> build_corr_pyramid(const Tensor<T>& f1, const Tensor<T>& f2,
                                  int levels) {
  const int H = f1.dim(0), W = f1.dim(1), D = f1.dim(2);
  detail::require(f2.dim(0) == H && f2.dim(1) == W && f2.dim(2) == D,
                  "build_corr_pyramid: feature shapes differ");
  const int N = H * W;
  auto a = reshape(f1, Shape{N, D});
  auto b = reshape(f2, Shape{N, D});
  auto corr = mul_scalar(matmul(a, b, false, true),
                         T(1) / static_cast<T>(std::sqrt(double(D))));
  CorrPyramid<T> pyr;
  pyr.levels.push_back(reshape(corr, Shape{N, H, W}));
  for (int l = 1; l < levels; ++l)
    pyr.levels.push_back(avg_pool2x2(pyr.levels.back()));
  return pyr;
}

template <typename T>
Tensor<T> lookup_corr(const CorrPyramid<T>& pyr, const Tensor<T>& flow,
                      int radius) {
  std::vector<Tensor<T>> taps;
  double scale = 1.0;
  for (const auto& level : pyr.levels) {
    taps.push_back(corr_lookup(level, flow, radius, scale));
    scale *= 0.5;
  }
  return concat(taps, 2);
}

template <typename T>
struct UpdateOut {
  Tensor<T> hidden;
  Tensor<T> flow;    // stride-resolution flow after this refinement
  Tensor<T> logvar;  // stride-resolution log variance
  Tensor<T> delta;
};

// One recurrent refinement. The incoming flow is detached on entry.
template <typename T>
UpdateOut<T> update_step(const BoundParams<T>& p, const ModelConfig& cfg,
                         const Tensor<T>& hidden, const Tensor<T>& context,
                         const CorrPyramid<T>& pyramid,
                         const Tensor<T>& flow_lr) {
  using detail::conv_named;
  auto stop = [&](const Tensor<T>& t) {
    return cfg.detach_internal ? detach(t) : t;
  };
  Tensor<T> flow_in = stop(flow_lr);
  Tensor<T> corr = lookup_corr(pyramid, flow_in, cfg.corr_radius);

  // Motion encoder.
  Tensor<T> c = relu(conv_named(p, "menc.corr1", corr, 1, 0));
  c = relu(conv_named(p, "menc.corr2", c, 1, 1));
  Tensor<T> fm = relu(conv_named(p, "menc.flow1", flow_in, 1, 1));
  Tensor<T> m =
      relu(conv_named(p, "menc.out", concat<T>({c, fm}, 2), 1, 1));
  Tensor<T> motion = concat<T>({m, flow_in}, 2);

  // ConvGRU.
  Tensor<T> x = concat<T>({motion, context}, 2);
  Tensor<T> hx = concat<T>({hidden, x}, 2);
  Tensor<T> z = sigmoid(conv_named(p, "gru.z", hx, 1, 1));
  Tensor<T> r = sigmoid(conv_named(p, "gru.r", hx, 1, 1));
  Tensor<T> q =
      tanh_op(conv_named(p, "gru.q", concat<T>({mul(r, hidden), x}, 2), 1, 1));
  Tensor<T> h = add(mul(sub_from_scalar(T(1), z), hidden), mul(z, q));

  // Heads: confidence-gated flow residual, decoupled log variance.
  Tensor<T> f = relu(conv_named(p, "cflow.c1", h, 1, 1));
  f = relu(conv_named(p, "cflow.c2", f, 1, 1));
  Tensor<T> alpha_pre = relu(conv_named(p, "cunc.c1", h, 1, 1));
  Tensor<T> alpha = conv_named(p, "cunc.c2", alpha_pre, 1, 1);
  Tensor<T> gate = stop(sigmoid(neg(alpha)));
  Tensor<T> f_gated = mul(f, broadcast_to(gate, f.shape()));
  Tensor<T> head_in = concat<T>({f, f_gated, stop(alpha)}, 2);
  Tensor<T> d = relu(conv_named(p, "cflow2.c1", head_in, 1, 1));
  Tensor<T> delta = conv_named(p, "cflow2.c2", d, 1, 1);

  UpdateOut<T> out;
  out.hidden = h;
  out.delta = delta;
  out.flow = add(flow_in, delta);
  out.logvar = alpha;
  return out;
}

template <typename T>
struct ModelOut {
  std::vector<Tensor<T>> flow_full;    // per iteration, (H,W,2), pixel units
  std::vector<Tensor<T>> logvar_full;  // per iteration, (H,W,1)
  std::vector<Tensor<T>> flow_lr;      // stride-resolution iterates
  std::vector<Tensor<T>> logvar_lr;
  Tensor<T> hidden;
};

// Full forward: encode, build the pyramid once, run `iterations`
// refinements from zero flow. Stride-resolution flow is in feature-grid
// units; full-resolution outputs are bilinearly upsampled with values
// scaled by the stride.
template <typename T>
ModelOut<T> forward_model(Graph<T>& g, const BoundParams<T>& p,
                          const ModelConfig& cfg, const Tensor<T>& img1,
                          const Tensor<T>& img2, int iterations = 0) {
  cfg.validate();
  detail::require(img1.rank() == 3 && img2.rank() == 3 &&
                      img1.dim(2) == cfg.input_channels &&
                      same_shape(img1.shape(), img2.shape()),
                  "forward_model: bad image shapes");
  cfg.validate_input(img1.dim(0), img1.dim(1));
  if (iterations <= 0) iterations = cfg.iterations;

  Tensor<T> f1 = detail::encoder_forward(p, cfg, "fnet", img1);
  Tensor<T> f2 = detail::encoder_forward(p, cfg, "fnet", img2);
  Tensor<T> cboth = detail::encoder_forward(p, cfg, "cnet", img1);
  const int Hs = f1.dim(0), Ws = f1.dim(1);
  Tensor<T> hidden =
      tanh_op(slice(cboth, {0, 0, 0}, {Hs, Ws, cfg.hidden_dim}));
  Tensor<T> context =
      relu(slice(cboth, {0, 0, cfg.hidden_dim}, {Hs, Ws, cfg.context_dim}));

  CorrPyramid<T> pyramid = build_corr_pyramid(f1, f2, cfg.corr_levels);

  ModelOut<T> out;
  Tensor<T> flow = g.zeros(Shape{Hs, Ws, 2});
  for (int k = 0; k < iterations; ++k) {
    UpdateOut<T> step = update_step(p, cfg, hidden, context, pyramid, flow);
    hidden = step.hidden;
    flow = step.flow;
    out.flow_lr.push_back(step.flow);
    out.logvar_lr.push_back(step.logvar);
    out.flow_full.push_back(upsample_bilinear(
        mul_scalar(step.flow, static_cast<T>(cfg.feature_stride)),
        cfg.feature_stride));
    out.logvar_full.push_back(
        upsample_bilinear(step.logvar, cfg.feature_stride));
  }
  out.hidden = hidden;
  return out;
}

// Inference on plain rasters: no gradients, returns final flow and
// per-pixel variance (exp of the log variance).
struct InferenceResult {
  FlowField flow;
  ScalarMap variance;
};

inline InferenceResult infer(const ParamStore& params, const ModelConfig& cfg,
                             const RasterImage& img1, const RasterImage& img2,
                             int iterations = 0) {
  Graph<float> g;
  auto bound = bind_params(g, params, /*grads=*/false);
  auto out = forward_model(g, bound, cfg, tensor_from_image(g, img1),
                           tensor_from_image(g, img2), iterations);
  InferenceResult res;
  res.flow = flow_from_tensor(out.flow_full.back());
  ScalarMap lv = scalar_map_from_tensor(out.logvar_full.back());
  res.variance = lv;
  for (auto& v : res.variance.data) v = std::exp(v);
  return res;
}

}  // namespace u2flow
