#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "u2flow/error.hpp"

// Small 2D transform types shared by the synthetic generator, augmentation,
// and homography fitting. Points are (x, y); pixel (row y, col x) maps to
// point (x, y).

namespace u2flow {

struct Vec2 {
  double x = 0, y = 0;
};

// p' = [a b; c d] p + [tx ty]
struct Affine2 {
  double a = 1, b = 0, c = 0, d = 1, tx = 0, ty = 0;

  Vec2 apply(double x, double y) const {
    return {a * x + b * y + tx, c * x + d * y + ty};
  }
  Vec2 apply(const Vec2& p) const { return apply(p.x, p.y); }

  double det() const { return a * d - b * c; }

  Affine2 inverse() const {
    const double dt = det();
    detail::require(std::abs(dt) > 1e-12, "Affine2: singular");
    Affine2 inv;
    inv.a = d / dt;
    inv.b = -b / dt;
    inv.c = -c / dt;
    inv.d = a / dt;
    inv.tx = -(inv.a * tx + inv.b * ty);
    inv.ty = -(inv.c * tx + inv.d * ty);
    return inv;
  }

  // this ∘ other (apply other first).
  Affine2 compose(const Affine2& o) const {
    Affine2 r;
    r.a = a * o.a + b * o.c;
    r.b = a * o.b + b * o.d;
    r.c = c * o.a + d * o.c;
    r.d = c * o.b + d * o.d;
    const Vec2 t = apply(o.tx, o.ty);
    r.tx = t.x;
    r.ty = t.y;
    return r;
  }

  static Affine2 translation(double tx, double ty) {
    Affine2 t;
    t.tx = tx;
    t.ty = ty;
    return t;
  }

  // Rotation by radians and isotropic scale about a fixed center.
  static Affine2 rigid_about(double cx, double cy, double radians,
                             double scale) {
    const double cs = std::cos(radians) * scale;
    const double sn = std::sin(radians) * scale;
    Affine2 t;
    t.a = cs;
    t.b = -sn;
    t.c = sn;
    t.d = cs;
    t.tx = cx - (cs * cx - sn * cy);
    t.ty = cy - (sn * cx + cs * cy);
    return t;
  }
};

// Row-major 3x3 projective transform.
struct Homography33 {
  std::array<double, 9> h = {1, 0, 0, 0, 1, 0, 0, 0, 1};

  static Homography33 from_affine(const Affine2& t) {
    Homography33 m;
    m.h = {t.a, t.b, t.tx, t.c, t.d, t.ty, 0, 0, 1};
    return m;
  }

  Vec2 apply(double x, double y) const {
    const double w = h[6] * x + h[7] * y + h[8];
    detail::require(std::abs(w) > 1e-12, "Homography33: point at infinity");
    return {(h[0] * x + h[1] * y + h[2]) / w,
            (h[3] * x + h[4] * y + h[5]) / w};
  }
  Vec2 apply(const Vec2& p) const { return apply(p.x, p.y); }

  Homography33 compose(const Homography33& o) const {
    Homography33 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double s = 0;
        for (int k = 0; k < 3; ++k)
          s += h[static_cast<size_t>(3 * i + k)] *
               o.h[static_cast<size_t>(3 * k + j)];
        r.h[static_cast<size_t>(3 * i + j)] = s;
      }
    return r;
  }

  Homography33 inverse() const {
    // Adjugate over determinant.
    const auto& m = h;
    std::array<double, 9> adj = {
        m[4] * m[8] - m[5] * m[7], m[2] * m[7] - m[1] * m[8],
        m[1] * m[5] - m[2] * m[4], m[5] * m[6] - m[3] * m[8],
        m[0] * m[8] - m[2] * m[6], m[2] * m[3] - m[0] * m[5],
        m[3] * m[7] - m[4] * m[6], m[1] * m[6] - m[0] * m[7],
        m[0] * m[4] - m[1] * m[3]};
    const double det = m[0] * adj[0] + m[1] * adj[3] + m[2] * adj[6];
    detail::require(std::abs(det) > 1e-15, "Homography33: singular");
    Homography33 inv;
    for (size_t i = 0; i < 9; ++i) inv.h[i] = adj[i] / det;
    return inv;
  }
};

// Convex hull (Andrew monotone chain), CCW in (x right, y down) terms.
inline std::vector<Vec2> convex_hull(std::vector<Vec2> pts) {
  std::sort(pts.begin(), pts.end(), [](const Vec2& p, const Vec2& q) {
    return p.x < q.x || (p.x == q.x && p.y < q.y);
  });
  auto cross = [](const Vec2& o, const Vec2& a, const Vec2& b) {
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
  };
  const size_t n = pts.size();
  if (n < 3) return pts;
  std::vector<Vec2> hull(2 * n);
  size_t k = 0;
  for (size_t i = 0; i < n; ++i) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  const size_t lower = k + 1;
  for (size_t i = n - 1; i-- > 0;) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

// Convexity means every interior point sees all edges on one cross-product
// side; the test is orientation-agnostic (signs just have to agree), so
// polygons survive any non-degenerate affine. Boundary counts as inside.
inline bool point_in_convex_poly(const std::vector<Vec2>& poly, double x,
                                 double y) {
  const size_t n = poly.size();
  if (n < 3) return false;
  bool pos = false, neg = false;
  for (size_t i = 0; i < n; ++i) {
    const Vec2& a = poly[i];
    const Vec2& b = poly[(i + 1) % n];
    const double cr = (b.x - a.x) * (y - a.y) - (b.y - a.y) * (x - a.x);
    if (cr > 0) pos = true;
    if (cr < 0) neg = true;
    if (pos && neg) return false;
  }
  return true;
}

}  // namespace u2flow
