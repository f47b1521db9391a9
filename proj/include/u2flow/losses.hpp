#pragma once

// Training objectives: forward-backward occlusion check, occlusion-masked
// photometric loss (l1 + SSIM + soft census), edge-aware first-order
// smoothness, the decoupled log-variance likelihood and its companion
// augmentation-consistency residual, and the weighted per-iteration total.

#include <cmath>
#include <optional>
#include <vector>

#include "u2flow/error.hpp"
#include "u2flow/image.hpp"
#include "u2flow/ops.hpp"
#include "u2flow/tensor.hpp"

namespace u2flow {

struct LossWeights {
  float lambda_hg = 0.1f;   // homography smoothness
  float lambda_sm = 55.f;   // edge-aware smoothness
  float lambda_ar = 0.02f;  // augmentation residual
  float lambda_unc = 0.005f;  // log-variance likelihood
  float tau_hg = 2.f;         // variance threshold for reliable homography
                              // correspondences
  float zeta = 0.8f;          // per-iteration exponential decay
  float w_l1 = 0.15f, w_ssim = 0.85f, w_census = 1.f;
  float occ_alpha1 = 0.01f, occ_alpha2 = 0.5f;  // adaptive occlusion threshold
  float edge_sharpness = 150.f;  // smoothness edge weight on [0,1] intensities

  void validate() const {
    detail::require(lambda_hg >= 0 && lambda_sm >= 0 && lambda_ar >= 0 &&
                        lambda_unc >= 0 && w_l1 >= 0 && w_ssim >= 0 &&
                        w_census >= 0,
                    "LossWeights: weights must be >= 0");
    detail::require(zeta > 0 && zeta <= 1, "LossWeights: zeta in (0,1]");
    detail::require(tau_hg > 0, "LossWeights: tau_hg > 0");
  }
};

// Forward-backward consistency: pixel p is occluded iff
//   ||F_fwd(p) + F_bwd(p + F_fwd(p))|| > a1*(||F_fwd(p)||^2 + ||F_bwd(q)||^2) + a2
// with the backward flow sampled bilinearly (border clamp). Not
// differentiated through; produced as a plain binary mask.
inline MaskImage occlusion_mask(const FlowField& fwd, const FlowField& bwd,
                                float a1 = 0.01f, float a2 = 0.5f) {
  detail::require(fwd.width == bwd.width && fwd.height == bwd.height,
                  "occlusion_mask: shape mismatch");
  const int W = fwd.width, H = fwd.height;
  MaskImage mask(W, H);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const float uf = fwd.u(y, x), vf = fwd.v(y, x);
      float qx = static_cast<float>(x) + uf, qy = static_cast<float>(y) + vf;
      qx = std::min(std::max(qx, 0.f), static_cast<float>(W - 1));
      qy = std::min(std::max(qy, 0.f), static_cast<float>(H - 1));
      const int x0 = static_cast<int>(std::floor(qx));
      const int y0 = static_cast<int>(std::floor(qy));
      const int x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
      const float ax = qx - static_cast<float>(x0);
      const float ay = qy - static_cast<float>(y0);
      auto lerp2 = [&](auto&& f) {
        return (1 - ay) * ((1 - ax) * f(x0, y0) + ax * f(x1, y0)) +
               ay * ((1 - ax) * f(x0, y1) + ax * f(x1, y1));
      };
      const float ub = lerp2([&](int xx, int yy) { return bwd.u(yy, xx); });
      const float vb = lerp2([&](int xx, int yy) { return bwd.v(yy, xx); });
      const float res =
          std::sqrt((uf + ub) * (uf + ub) + (vf + vb) * (vf + vb));
      const float delta = a1 * (uf * uf + vf * vf + ub * ub + vb * vb) + a2;
      mask.at(y, x) = res > delta ? 1 : 0;
    }
  }
  return mask;
}

namespace detail {

// Mean of a per-pixel (H,W,1) map over pixels where keep==1. keep must be a
// constant 0/1 tensor; throws when nothing is kept.
template <typename T>
Tensor<T> masked_mean_map(const Tensor<T>& map, const Tensor<T>& keep) {
  detail::require(map.rank() == 3 && map.dim(2) == 1,
                  "masked_mean_map: (H,W,1) map required");
  detail::require(keep.shape() == map.shape(),
                  "masked_mean_map: mask shape mismatch");
  double count = 0;
  for (T v : keep.values()) count += static_cast<double>(v);
  if (count <= 0) throw DegenerateMaskError("loss mask keeps no pixels");
  return mul_scalar(sum_all(mul(map, keep)), T(1.0 / count));
}

// 3x3 box filter with border clamp.
template <typename T>
Tensor<T> box3(const Tensor<T>& x) {
  Tensor<T> acc = x;
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx)
      if (dy != 0 || dx != 0) acc = add(acc, shift2d(x, dy, dx));
  return mul_scalar(acc, T(1) / T(9));
}

template <typename T>
Tensor<T> channel_mean(const Tensor<T>& x) {
  return reduce_mean(x, {2}, true);
}

// Census signature bit: normalized difference between the pixel at +(dy,dx)
// and the center, on 255-scale intensities.
template <typename T>
Tensor<T> census_bit(const Tensor<T>& gray, int dy, int dx) {
  Tensor<T> d = sub(shift2d(gray, dy, dx), gray);
  return div(d, sqrt_op(add_scalar(mul(d, d), T(0.81))));
}

}  // namespace detail

// Per-pixel (H,W,1) l1 residual between two flow tensors, summed over the
// two components: (3,-4) vs (0,0) gives 7.
template <typename T>
Tensor<T> flow_residual_l1(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.shape() == b.shape() && a.rank() == 3 && a.dim(2) == 2,
                  "flow_residual_l1: matching (H,W,2) tensors required");
  return reduce_sum(abs_op(sub(a, b)), {2}, true);
}

// Occlusion-masked photometric loss between I1 and I2 warped back by the
// forward flow: w_l1 * l1 + w_ssim * (1-SSIM)/2 (3x3 box window) +
// w_census * soft census (7x7, per-bit Charbonnier). Each term is averaged
// over kept pixels separately. keep is (H,W,1), 1 = use the pixel.
template <typename T>
Tensor<T> photometric_loss(const Tensor<T>& img1, const Tensor<T>& img2,
                           const Tensor<T>& flow, const Tensor<T>& keep,
                           const LossWeights& w = {}) {
  detail::require(img1.shape() == img2.shape() && img1.rank() == 3,
                  "photometric_loss: image shape mismatch");
  Tensor<T> warped = warp_bilinear(img2, flow);

  // Zero-weight terms are not built at all: each one adds a sizeable chunk
  // of graph (census in particular), so training configs that disable a term
  // should not pay for its forward/backward passes.
  Tensor<T> out = Tensor<T>();

  if (w.w_l1 != 0) {
    Tensor<T> l1_map = detail::channel_mean(abs_op(sub(img1, warped)));
    out = mul_scalar(detail::masked_mean_map(l1_map, keep), T(w.w_l1));
  }

  if (w.w_ssim != 0) {
    // SSIM on box-filtered local statistics, per channel then averaged.
    const T c1 = T(1e-4), c2 = T(9e-4);
    Tensor<T> mu1 = detail::box3(img1), mu2 = detail::box3(warped);
    Tensor<T> mu1_sq = mul(mu1, mu1), mu2_sq = mul(mu2, mu2);
    Tensor<T> mu12 = mul(mu1, mu2);
    Tensor<T> var1 = sub(detail::box3(mul(img1, img1)), mu1_sq);
    Tensor<T> var2 = sub(detail::box3(mul(warped, warped)), mu2_sq);
    Tensor<T> cov = sub(detail::box3(mul(img1, warped)), mu12);
    Tensor<T> num = mul(add_scalar(mul_scalar(mu12, T(2)), c1),
                        add_scalar(mul_scalar(cov, T(2)), c2));
    Tensor<T> den = mul(add_scalar(add(mu1_sq, mu2_sq), c1),
                        add_scalar(add(var1, var2), c2));
    Tensor<T> ssim = div(num, den);
    Tensor<T> ssim_map = clamp_min(
        detail::channel_mean(mul_scalar(sub_from_scalar(T(1), ssim), T(0.5))),
        T(0));
    Tensor<T> term =
        mul_scalar(detail::masked_mean_map(ssim_map, keep), T(w.w_ssim));
    out = out.valid() ? add(out, term) : term;
  }

  if (w.w_census != 0) {
    // Soft census: 7x7 signatures on 255-scale intensities; per-bit
    // Charbonnier sqrt(e^2 + eps^2) - sqrt(eps^2), written with the computed
    // root at zero so identical signatures cost exactly 0.
    const T eps = T(0.01);
    const T rho_at_zero = std::sqrt(eps * eps);
    Tensor<T> g1 = mul_scalar(detail::channel_mean(img1), T(255));
    Tensor<T> g2 = mul_scalar(detail::channel_mean(warped), T(255));
    Tensor<T> census_sum;
    int bits = 0;
    for (int dy = -3; dy <= 3; ++dy) {
      for (int dx = -3; dx <= 3; ++dx) {
        if (dy == 0 && dx == 0) continue;
        Tensor<T> e = sub(detail::census_bit(g1, dy, dx),
                          detail::census_bit(g2, dy, dx));
        Tensor<T> rho = add_scalar(sqrt_op(add_scalar(mul(e, e), eps * eps)),
                                   -rho_at_zero);
        census_sum = bits == 0 ? rho : add(census_sum, rho);
        ++bits;
      }
    }
    Tensor<T> census_map = mul_scalar(census_sum, T(1) / T(bits));
    Tensor<T> term =
        mul_scalar(detail::masked_mean_map(census_map, keep), T(w.w_census));
    out = out.valid() ? add(out, term) : term;
  }

  if (!out.valid()) {
    // All weights zero: a constant zero keeps the loss assembly uniform.
    return img1.graph()->zeros({1});
  }
  return out;
}

// First-order edge-aware smoothness: per-axis weighted l1 of flow
// differences, weights exp(-edge_sharpness * mean_c |dI|), each axis
// normalized by its own difference count.
template <typename T>
Tensor<T> smoothness_loss(const Tensor<T>& flow, const Tensor<T>& img,
                          T edge_sharpness = T(150)) {
  detail::require(flow.rank() == 3 && flow.dim(2) == 2,
                  "smoothness_loss: (H,W,2) flow required");
  detail::require(img.rank() == 3 && img.dim(0) == flow.dim(0) &&
                      img.dim(1) == flow.dim(1),
                  "smoothness_loss: image/flow size mismatch");
  const int H = flow.dim(0), W = flow.dim(1), C = img.dim(2);
  auto axis_term = [&](int axis) {
    const int dh = axis == 0 ? 1 : 0, dw = axis == 1 ? 1 : 0;
    Tensor<T> fa = slice(flow, {dh, dw, 0}, {H - dh, W - dw, 2});
    Tensor<T> fb = slice(flow, {0, 0, 0}, {H - dh, W - dw, 2});
    Tensor<T> df = reduce_sum(abs_op(sub(fa, fb)), {2}, true);
    Tensor<T> ia = slice(img, {dh, dw, 0}, {H - dh, W - dw, C});
    Tensor<T> ib = slice(img, {0, 0, 0}, {H - dh, W - dw, C});
    Tensor<T> wmap = exp_op(mul_scalar(
        detail::channel_mean(abs_op(sub(ia, ib))), -edge_sharpness));
    const double n = static_cast<double>(H - dh) * (W - dw);
    return mul_scalar(sum_all(mul(wmap, df)), T(1.0 / n));
  };
  return add(axis_term(1), axis_term(0));
}

// Log-variance likelihood against a frozen residual map:
//   sqrt(2) * exp(-alpha/2) * dhat + alpha/2,
// averaged over kept pixels. dhat must not carry gradient (pass it through
// detach or as a constant); alpha trains the uncertainty branch only.
template <typename T>
Tensor<T> uncertainty_nll(const Tensor<T>& alpha, const Tensor<T>& dhat,
                          const Tensor<T>& keep) {
  detail::require(alpha.shape() == dhat.shape() && alpha.rank() == 3 &&
                      alpha.dim(2) == 1,
                  "uncertainty_nll: (H,W,1) alpha/dhat required");
  Tensor<T> nll =
      add(mul_scalar(mul(exp_op(mul_scalar(alpha, T(-0.5))), dhat),
                     T(std::sqrt(2.0))),
          mul_scalar(alpha, T(0.5)));
  return detail::masked_mean_map(nll, keep);
}

// Augmentation-consistency residual: plain masked mean of the per-pixel
// residual, gradient flowing into the flow branch.
template <typename T>
Tensor<T> augmentation_reg_loss(const Tensor<T>& dhat, const Tensor<T>& keep) {
  return detail::masked_mean_map(dhat, keep);
}

template <typename T>
struct IterationLossTerms {
  Tensor<T> photometric;
  std::optional<Tensor<T>> smoothness;
  std::optional<Tensor<T>> aug_residual;
  std::optional<Tensor<T>> uncertainty;
};

// Weighted total over K refinement iterations, later iterations weighted
// more: lambda_hg*l_hg + sum_k zeta^(K-1-k) * (l_ph + lambda_sm*l_sm +
// lambda_ar*l_ar + lambda_unc*l_unc). The homography term, when present,
// applies to the final iteration only and enters once, undecayed.
template <typename T>
Tensor<T> total_loss(Graph<T>& g,
                     const std::vector<IterationLossTerms<T>>& iters,
                     const std::optional<Tensor<T>>& hg_loss,
                     const LossWeights& w = {}) {
  detail::require(!iters.empty(), "total_loss: no per-iteration terms");
  w.validate();
  const int K = static_cast<int>(iters.size());
  Tensor<T> total = g.scalar(T(0));
  for (int k = 0; k < K; ++k) {
    Tensor<T> term = iters[static_cast<size_t>(k)].photometric;
    if (iters[static_cast<size_t>(k)].smoothness)
      term = add(term, mul_scalar(*iters[static_cast<size_t>(k)].smoothness,
                                  T(w.lambda_sm)));
    if (iters[static_cast<size_t>(k)].aug_residual)
      term = add(term, mul_scalar(*iters[static_cast<size_t>(k)].aug_residual,
                                  T(w.lambda_ar)));
    if (iters[static_cast<size_t>(k)].uncertainty)
      term = add(term, mul_scalar(*iters[static_cast<size_t>(k)].uncertainty,
                                  T(w.lambda_unc)));
    const T coef = static_cast<T>(std::pow(static_cast<double>(w.zeta),
                                           static_cast<double>(K - 1 - k)));
    total = add(total, mul_scalar(term, coef));
  }
  if (hg_loss) total = add(total, mul_scalar(*hg_loss, T(w.lambda_hg)));
  return total;
}

template <typename T>
Tensor<T> total_loss(Graph<T>& g,
                     const std::vector<IterationLossTerms<T>>& iters,
                     const LossWeights& w = {}) {
  return total_loss(g, iters, std::optional<Tensor<T>>{}, w);
}

template <typename T>
Tensor<T> total_loss(Graph<T>& g,
                     const std::vector<IterationLossTerms<T>>& iters,
                     const Tensor<T>& hg_loss, const LossWeights& w = {}) {
  return total_loss(g, iters, std::optional<Tensor<T>>(hg_loss), w);
}

}  // namespace u2flow
