#pragma once

// Region-wise planar-homography fitting on reliable (low-variance) flow
// correspondences, and the resulting smoothness loss that pulls the
// predicted flow toward the homography-induced flow inside each region.

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cmath>
#include <optional>
#include <random>
#include <vector>

#include "u2flow/error.hpp"
#include "u2flow/geometry.hpp"
#include "u2flow/image.hpp"
#include "u2flow/ops.hpp"

namespace u2flow {

struct Correspondence {
  double sx, sy;  // source pixel
  double dx, dy;  // matched position (source + flow)
};

namespace detail {

// Hartley-normalized direct linear transform. Requires >= 4 points.
inline std::optional<Homography33> fit_homography_dlt(
    const std::vector<Correspondence>& pts) {
  const int n = static_cast<int>(pts.size());
  if (n < 4) return std::nullopt;
  auto normalizer = [&](bool dst) {
    double cx = 0, cy = 0;
    for (const auto& p : pts) {
      cx += dst ? p.dx : p.sx;
      cy += dst ? p.dy : p.sy;
    }
    cx /= n;
    cy /= n;
    double dist = 0;
    for (const auto& p : pts)
      dist += std::hypot((dst ? p.dx : p.sx) - cx, (dst ? p.dy : p.sy) - cy);
    dist /= n;
    const double s = dist > 1e-12 ? std::sqrt(2.0) / dist : 1.0;
    Homography33 t;
    t.h = {s, 0, -s * cx, 0, s, -s * cy, 0, 0, 1};
    return t;
  };
  const Homography33 ts = normalizer(false), td = normalizer(true);
  Eigen::MatrixXd a(2 * n, 9);
  for (int i = 0; i < n; ++i) {
    const auto& p = pts[static_cast<size_t>(i)];
    const double x = ts.h[0] * p.sx + ts.h[2];
    const double y = ts.h[4] * p.sy + ts.h[5];
    const double u = td.h[0] * p.dx + td.h[2];
    const double v = td.h[4] * p.dy + td.h[5];
    a.row(2 * i) << -x, -y, -1, 0, 0, 0, u * x, u * y, u;
    a.row(2 * i + 1) << 0, 0, 0, -x, -y, -1, v * x, v * y, v;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::VectorXd hv = svd.matrixV().col(8);
  Homography33 hn;
  for (int i = 0; i < 9; ++i) hn.h[static_cast<size_t>(i)] = hv(i);
  if (std::abs(hn.h[8]) < 1e-12 &&
      std::abs(hn.h[0]) + std::abs(hn.h[4]) < 1e-12)
    return std::nullopt;
  // Denormalize: H = Td^-1 * Hn * Ts.
  Homography33 h = td.inverse().compose(hn.compose(ts));
  const double norm = h.h[8];
  if (std::abs(norm) < 1e-12) return std::nullopt;
  for (auto& v : h.h) v /= norm;
  return h;
}

// Forward transfer error; infinite when the point maps to infinity.
inline double transfer_error(const Homography33& h,
                             const Correspondence& p) {
  const double w = h.h[6] * p.sx + h.h[7] * p.sy + h.h[8];
  if (std::abs(w) < 1e-12) return std::numeric_limits<double>::infinity();
  const double px = (h.h[0] * p.sx + h.h[1] * p.sy + h.h[2]) / w;
  const double py = (h.h[3] * p.sx + h.h[4] * p.sy + h.h[5]) / w;
  return std::hypot(px - p.dx, py - p.dy);
}

inline bool any_three_collinear(const std::array<const Correspondence*, 4>& q,
                                bool dst) {
  for (int skip = 0; skip < 4; ++skip) {
    const Correspondence* t[3];
    int m = 0;
    for (int i = 0; i < 4; ++i)
      if (i != skip) t[m++] = q[static_cast<size_t>(i)];
    auto px = [&](int i) { return dst ? t[i]->dx : t[i]->sx; };
    auto py = [&](int i) { return dst ? t[i]->dy : t[i]->sy; };
    const double area = (px(1) - px(0)) * (py(2) - py(0)) -
                        (px(2) - px(0)) * (py(1) - py(0));
    if (std::abs(area) < 1e-9) return true;
  }
  return false;
}

}  // namespace detail

struct RansacOptions {
  int iterations = 250;
  double inlier_px = 0.5;  // transfer-error threshold
  uint64_t seed = 1234;
};

struct RansacResult {
  Homography33 h;
  int inliers = 0;
};

// Classic 4-point RANSAC over DLT homographies with a final least-squares
// refit on the inlier set. Returns absent when no model with >= 4 inliers
// is found.
inline std::optional<RansacResult> ransac_homography(
    const std::vector<Correspondence>& pts, const RansacOptions& opt = {}) {
  const int n = static_cast<int>(pts.size());
  if (n < 4) return std::nullopt;
  std::mt19937_64 rng(opt.seed);
  std::uniform_int_distribution<int> pick(0, n - 1);
  std::vector<char> best_mask;
  int best_count = 0;
  for (int it = 0; it < opt.iterations; ++it) {
    int idx[4];
    idx[0] = pick(rng);
    do idx[1] = pick(rng); while (idx[1] == idx[0]);
    do idx[2] = pick(rng); while (idx[2] == idx[0] || idx[2] == idx[1]);
    do idx[3] = pick(rng);
    while (idx[3] == idx[0] || idx[3] == idx[1] || idx[3] == idx[2]);
    std::array<const Correspondence*, 4> q = {
        &pts[static_cast<size_t>(idx[0])], &pts[static_cast<size_t>(idx[1])],
        &pts[static_cast<size_t>(idx[2])], &pts[static_cast<size_t>(idx[3])]};
    if (detail::any_three_collinear(q, false) ||
        detail::any_three_collinear(q, true))
      continue;
    auto h = detail::fit_homography_dlt({*q[0], *q[1], *q[2], *q[3]});
    if (!h) continue;
    std::vector<char> mask(static_cast<size_t>(n), 0);
    int count = 0;
    for (int i = 0; i < n; ++i)
      if (detail::transfer_error(*h, pts[static_cast<size_t>(i)]) <
          opt.inlier_px) {
        mask[static_cast<size_t>(i)] = 1;
        ++count;
      }
    if (count > best_count) {
      best_count = count;
      best_mask = std::move(mask);
    }
  }
  if (best_count < 4) return std::nullopt;
  std::vector<Correspondence> inl;
  inl.reserve(static_cast<size_t>(best_count));
  for (int i = 0; i < n; ++i)
    if (best_mask[static_cast<size_t>(i)]) inl.push_back(pts[static_cast<size_t>(i)]);
  auto refit = detail::fit_homography_dlt(inl);
  if (!refit) return std::nullopt;
  RansacResult r;
  r.h = *refit;
  r.inliers = 0;
  for (const auto& p : pts)
    r.inliers += detail::transfer_error(r.h, p) < opt.inlier_px ? 1 : 0;
  return r;
}

struct RegionFit {
  Homography33 h;
  int reliable = 0;  // correspondences below the variance threshold
  int inliers = 0;
};

// Fit one region: correspondences (p, p + F(p)) restricted to pixels whose
// predicted variance exp(alpha) is strictly below tau_hg. Absent when fewer
// than 16 reliable pixels exist or the RANSAC inlier ratio is below 1/2.
inline std::optional<RegionFit> fit_region_homography(
    const FlowField& flow, const MaskImage& region, const ScalarMap& alpha,
    float tau_hg, const RansacOptions& opt = {}) {
  detail::require(flow.width == region.width && flow.height == region.height &&
                      alpha.width == flow.width && alpha.height == flow.height,
                  "fit_region_homography: shape mismatch");
  detail::require(tau_hg > 0, "fit_region_homography: tau_hg > 0");
  detail::require(region.count() > 0, "fit_region_homography: empty region");
  std::vector<Correspondence> pts;
  for (int y = 0; y < flow.height; ++y)
    for (int x = 0; x < flow.width; ++x) {
      const size_t i = static_cast<size_t>(y) * flow.width + x;
      if (region.data[i] == 0) continue;
      if (!(std::exp(alpha.data[i]) < tau_hg)) continue;
      Correspondence c;
      c.sx = x;
      c.sy = y;
      c.dx = x + static_cast<double>(flow.data[2 * i]);
      c.dy = y + static_cast<double>(flow.data[2 * i + 1]);
      pts.push_back(c);
    }
  const int reliable = static_cast<int>(pts.size());
  if (reliable < 16) return std::nullopt;
  auto rr = ransac_homography(pts, opt);
  if (!rr) return std::nullopt;
  if (rr->inliers * 2 < reliable) return std::nullopt;
  RegionFit fit;
  fit.h = rr->h;
  fit.reliable = reliable;
  fit.inliers = rr->inliers;
  return fit;
}

template <typename T>
struct HomographyLossResult {
  Tensor<T> loss;
  int regions_fitted = 0;
  int pixels = 0;  // pixels under a fitted region
  bool any_fitted = false;
};

// Mean l1 distance between the predicted flow and the homography-induced
// flow H(p) - p over all pixels of regions that produced a fit. The target
// is a constant: no gradient reaches the fit. Regions must not overlap.
// With no fitted region the loss is constant 0 and any_fitted stays false.
template <typename T>
HomographyLossResult<T> homography_smoothness_loss(
    Graph<T>& g, const Tensor<T>& flow, const std::vector<MaskImage>& regions,
    const ScalarMap& alpha, float tau_hg, const RansacOptions& opt = {}) {
  detail::require(flow.rank() == 3 && flow.dim(2) == 2,
                  "homography_smoothness_loss: (H,W,2) flow required");
  const int H = flow.dim(0), W = flow.dim(1);
  // Constant-value view of the prediction for the fitting side.
  FlowField fv(W, H);
  const auto& vals = flow.values();
  for (size_t i = 0; i < fv.data.size(); ++i)
    fv.data[i] = static_cast<float>(vals[i]);

  std::vector<char> covered(static_cast<size_t>(H) * W, 0);
  for (const auto& r : regions) {
    detail::require(r.width == W && r.height == H,
                    "homography_smoothness_loss: region size mismatch");
    for (size_t i = 0; i < r.data.size(); ++i)
      if (r.data[i]) {
        detail::require(!covered[i],
                        "homography_smoothness_loss: regions overlap");
        covered[i] = 1;
      }
  }

  HomographyLossResult<T> out;
  out.loss = g.scalar(T(0));
  std::vector<T> target(static_cast<size_t>(H) * W * 2, T(0));
  std::vector<T> keep(static_cast<size_t>(H) * W, T(0));
  int64_t kept = 0;
  for (const auto& r : regions) {
    if (r.count() == 0) continue;
    auto fit = fit_region_homography(fv, r, alpha, tau_hg, opt);
    if (!fit) continue;
    ++out.regions_fitted;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const size_t i = static_cast<size_t>(y) * W + x;
        if (!r.data[i]) continue;
        const double w =
            fit->h.h[6] * x + fit->h.h[7] * y + fit->h.h[8];
        if (std::abs(w) < 1e-12) continue;  // degenerate target pixel
        const double px = (fit->h.h[0] * x + fit->h.h[1] * y + fit->h.h[2]) / w;
        const double py = (fit->h.h[3] * x + fit->h.h[4] * y + fit->h.h[5]) / w;
        target[2 * i] = static_cast<T>(px - x);
        target[2 * i + 1] = static_cast<T>(py - y);
        keep[i] = T(1);
        ++kept;
      }
  }
  out.pixels = static_cast<int>(kept);
  out.any_fitted = out.regions_fitted > 0;
  if (!out.any_fitted || kept == 0) return out;
  Tensor<T> tgt = g.constant({H, W, 2}, target);
  Tensor<T> km = g.constant({H, W, 1}, keep);
  Tensor<T> per_px = reduce_sum(abs_op(sub(flow, tgt)), {2}, true);
  out.loss = mul_scalar(sum_all(mul(per_px, km)),
                        T(1.0 / static_cast<double>(kept)));
  return out;
}

}  // namespace u2flow
