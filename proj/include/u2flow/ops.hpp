#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <utility>
#include <vector>

#include "u2flow/tensor.hpp"

// Differentiable op set over Graph<T>. Every op appends one node whose
// backward closure accumulates into its children via Graph::grad_buffer,
// keeping accumulation order fixed by construction order (deterministic).

namespace u2flow {

namespace detail {

template <typename T>
using MatRM =
    Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline std::vector<int64_t> strides_of(const Shape& s) {
  std::vector<int64_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i)
    st[i] = st[i + 1] * s[i + 1];
  return st;
}

template <typename T, class FwdF, class BwdF>
Tensor<T> unary_op(const Tensor<T>& x, FwdF f, BwdF df) {
  Graph<T>& g = *x.graph();
  const auto& xv = x.values();
  std::vector<T> yv(xv.size());
  for (size_t i = 0; i < xv.size(); ++i) yv[i] = f(xv[i]);
  const int xid = x.id();
  auto backward = [xid, df](Graph<T>& g, int id) {
    auto& n = g.node(id);
    const auto& gy = n.grad;
    const auto& xs = g.node(xid).value;
    const auto& ys = n.value;
    auto& gx = g.grad_buffer(xid);
    for (size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * df(xs[i], ys[i]);
  };
  return g.make_node(x.shape(), std::move(yv), {xid}, backward);
}

template <typename T, class FwdF, class BwdA, class BwdB>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, FwdF f, BwdA dfa,
                    BwdB dfb) {
  require(a.graph() == b.graph(), "binary op: graphs differ");
  require(same_shape(a.shape(), b.shape()),
          "binary op: shape mismatch " + shape_str(a.shape()) + " vs " +
              shape_str(b.shape()));
  Graph<T>& g = *a.graph();
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<T> yv(av.size());
  for (size_t i = 0; i < av.size(); ++i) yv[i] = f(av[i], bv[i]);
  const int aid = a.id(), bid = b.id();
  auto backward = [aid, bid, dfa, dfb](Graph<T>& g, int id) {
    auto& n = g.node(id);
    const auto& gy = n.grad;
    const auto& as = g.node(aid).value;
    const auto& bs = g.node(bid).value;
    auto& ga = g.grad_buffer(aid);
    for (size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i] * dfa(as[i], bs[i]);
    auto& gb = g.grad_buffer(bid);
    for (size_t i = 0; i < gb.size(); ++i) gb[i] += gy[i] * dfb(as[i], bs[i]);
  };
  return g.make_node(a.shape(), std::move(yv), {aid, bid}, backward);
}

}  // namespace detail

// ---- elementwise arithmetic ----

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(
      a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
      [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(
      a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
      [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(
      a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; },
      [](T x, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(
      a, b, [](T x, T y) { return x / y; },
      [](T, T y) { return T(1) / y; },
      [](T x, T y) { return -x / (y * y); });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
  return detail::unary_op(
      x, [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, T c) {
  return detail::unary_op(
      x, [c](T v) { return v * c; }, [c](T, T) { return c; });
}

template <typename T>
Tensor<T> sub_from_scalar(T c, const Tensor<T>& x) {
  return detail::unary_op(
      x, [c](T v) { return c - v; }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
  return mul_scalar(x, T(-1));
}

// ---- elementwise nonlinearities ----

template <typename T>
Tensor<T> exp_op(const Tensor<T>& x) {
  return detail::unary_op(
      x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log_op(const Tensor<T>& x) {
  return detail::unary_op(
      x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> sqrt_op(const Tensor<T>& x) {
  return detail::unary_op(
      x, [](T v) { return std::sqrt(v); },
      [](T, T y) { return y > T(0) ? T(1) / (T(2) * y) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  auto f = [](T v) {
    if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
    T e = std::exp(v);
    return e / (T(1) + e);
  };
  return detail::unary_op(
      x, f, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> tanh_op(const Tensor<T>& x) {
  return detail::unary_op(
      x, [](T v) { return std::tanh(v); },
      [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary_op(
      x, [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> abs_op(const Tensor<T>& x) {
  return detail::unary_op(
      x, [](T v) { return std::abs(v); },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> pow_scalar(const Tensor<T>& x, T p) {
  return detail::unary_op(
      x, [p](T v) { return std::pow(v, p); },
      [p](T v, T) { return p * std::pow(v, p - T(1)); });
}

// max(x, c) elementwise; subgradient 0 at the kink.
template <typename T>
Tensor<T> clamp_min(const Tensor<T>& x, T c) {
  return detail::unary_op(
      x, [c](T v) { return v > c ? v : c; },
      [c](T v, T) { return v > c ? T(1) : T(0); });
}

template <typename T>
Tensor<T> clamp_max(const Tensor<T>& x, T c) {
  return detail::unary_op(
      x, [c](T v) { return v < c ? v : c; },
      [c](T v, T) { return v < c ? T(1) : T(0); });
}

// ---- structure: detach / reshape / slice / concat / broadcast ----

// Value copy with no children: gradients never flow past it, and nodes only
// reachable through it keep exact-zero gradients.
template <typename T>
Tensor<T> detach(const Tensor<T>& x) {
  return x.graph()->constant(x.shape(), x.values());
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  detail::require(numel(shape) == x.size(), "reshape: numel mismatch");
  Graph<T>& g = *x.graph();
  const int xid = x.id();
  auto backward = [xid](Graph<T>& g, int id) {
    const auto& gy = g.node(id).grad;
    auto& gx = g.grad_buffer(xid);
    for (size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
  };
  return g.make_node(std::move(shape), x.values(), {xid}, backward);
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, const std::vector<int>& start,
                const std::vector<int>& size) {
  const Shape& xs = x.shape();
  const int r = x.rank();
  detail::require(static_cast<int>(start.size()) == r &&
                      static_cast<int>(size.size()) == r,
                  "slice: start/size rank mismatch");
  for (int i = 0; i < r; ++i)
    detail::require(start[i] >= 0 && size[i] >= 1 &&
                        start[i] + size[i] <= xs[i],
                    "slice: out of bounds");
  Shape ys(size.begin(), size.end());
  auto xst = detail::strides_of(xs);
  auto yst = detail::strides_of(ys);
  const int64_t n = numel(ys);
  std::vector<T> yv(static_cast<size_t>(n));
  const auto& xv = x.values();
  for (int64_t yi = 0; yi < n; ++yi) {
    int64_t xi = 0;
    int64_t rem = yi;
    for (int d = 0; d < r; ++d) {
      int64_t c = rem / yst[static_cast<size_t>(d)];
      rem -= c * yst[static_cast<size_t>(d)];
      xi += (start[static_cast<size_t>(d)] + c) * xst[static_cast<size_t>(d)];
    }
    yv[static_cast<size_t>(yi)] = xv[static_cast<size_t>(xi)];
  }
  const int xid = x.id();
  auto backward = [xid, xst, yst, start, r, n](Graph<T>& g, int id) {
    const auto& gy = g.node(id).grad;
    auto& gx = g.grad_buffer(xid);
    for (int64_t yi = 0; yi < n; ++yi) {
      int64_t xi = 0;
      int64_t rem = yi;
      for (int d = 0; d < r; ++d) {
        int64_t c = rem / yst[static_cast<size_t>(d)];
        rem -= c * yst[static_cast<size_t>(d)];
        xi +=
            (start[static_cast<size_t>(d)] + c) * xst[static_cast<size_t>(d)];
      }
      gx[static_cast<size_t>(xi)] += gy[static_cast<size_t>(yi)];
    }
  };
  return x.graph()->make_node(std::move(ys), std::move(yv), {xid}, backward);
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  detail::require(!parts.empty(), "concat: no inputs");
  Graph<T>& g = *parts[0].graph();
  const Shape& s0 = parts[0].shape();
  const int r = static_cast<int>(s0.size());
  detail::require(axis >= 0 && axis < r, "concat: axis out of range");
  Shape ys = s0;
  ys[static_cast<size_t>(axis)] = 0;
  for (const auto& p : parts) {
    detail::require(p.graph() == &g, "concat: graphs differ");
    detail::require(p.rank() == r, "concat: rank mismatch");
    for (int d = 0; d < r; ++d)
      detail::require(d == axis || p.dim(d) == s0[static_cast<size_t>(d)],
                      "concat: shape mismatch off-axis");
    ys[static_cast<size_t>(axis)] += p.dim(axis);
  }
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= s0[static_cast<size_t>(d)];
  for (int d = axis + 1; d < r; ++d) inner *= s0[static_cast<size_t>(d)];
  const int64_t out_axis = ys[static_cast<size_t>(axis)];
  std::vector<T> yv(static_cast<size_t>(outer * out_axis * inner));
  std::vector<int> ids;
  std::vector<int64_t> blocks;  // per-part axis extent * inner
  int64_t off = 0;
  for (const auto& p : parts) {
    const int64_t blk = static_cast<int64_t>(p.dim(axis)) * inner;
    const auto& pv = p.values();
    for (int64_t o = 0; o < outer; ++o)
      std::copy(pv.begin() + o * blk, pv.begin() + (o + 1) * blk,
                yv.begin() + o * out_axis * inner + off);
    ids.push_back(p.id());
    blocks.push_back(blk);
    off += blk;
  }
  auto backward = [ids, blocks, outer, out_axis, inner](Graph<T>& g, int id) {
    const auto& gy = g.node(id).grad;
    int64_t off = 0;
    for (size_t k = 0; k < ids.size(); ++k) {
      auto& gp = g.grad_buffer(ids[k]);
      const int64_t blk = blocks[k];
      for (int64_t o = 0; o < outer; ++o) {
        const T* src = gy.data() + o * out_axis * inner + off;
        T* dst = gp.data() + o * blk;
        for (int64_t i = 0; i < blk; ++i) dst[i] += src[i];
      }
      off += blk;
    }
  };
  return g.make_node(std::move(ys), std::move(yv), std::move(ids), backward);
}

// Broadcast x to `shape`: ranks aligned at the trailing edge, each source
// dim must equal the target or be 1.
template <typename T>
Tensor<T> broadcast_to(const Tensor<T>& x, Shape shape) {
  const Shape& xs = x.shape();
  const int ry = static_cast<int>(shape.size());
  const int rx = x.rank();
  detail::require(rx <= ry, "broadcast_to: source rank exceeds target");
  for (int d = 0; d < rx; ++d) {
    int xd = xs[static_cast<size_t>(d)];
    int yd = shape[static_cast<size_t>(d + ry - rx)];
    detail::require(xd == yd || xd == 1, "broadcast_to: incompatible dims");
  }
  auto yst = detail::strides_of(shape);
  auto xst = detail::strides_of(xs);
  const int64_t n = numel(shape);
  // Flat target index -> flat source index.
  auto to_src = [ry, rx, yst, xst, xs](int64_t yi) {
    int64_t xi = 0;
    int64_t rem = yi;
    for (int d = 0; d < ry; ++d) {
      int64_t c = rem / yst[static_cast<size_t>(d)];
      rem -= c * yst[static_cast<size_t>(d)];
      int sd = d - (ry - rx);
      if (sd >= 0 && xs[static_cast<size_t>(sd)] != 1)
        xi += c * xst[static_cast<size_t>(sd)];
    }
    return xi;
  };
  const auto& xv = x.values();
  std::vector<T> yv(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i)
    yv[static_cast<size_t>(i)] = xv[static_cast<size_t>(to_src(i))];
  const int xid = x.id();
  auto backward = [xid, to_src, n](Graph<T>& g, int id) {
    const auto& gy = g.node(id).grad;
    auto& gx = g.grad_buffer(xid);
    for (int64_t i = 0; i < n; ++i)
      gx[static_cast<size_t>(to_src(i))] += gy[static_cast<size_t>(i)];
  };
  return x.graph()->make_node(std::move(shape), std::move(yv), {xid},
                              backward);
}

// ---- reductions ----

// Sum over the listed axes. keepdims keeps reduced extents as 1; otherwise
// they are dropped (reducing all axes yields a rank-0 scalar).
template <typename T>
Tensor<T> reduce_sum(const Tensor<T>& x, const std::vector<int>& axes,
                     bool keepdims = false) {
  const Shape& xs = x.shape();
  const int r = x.rank();
  std::vector<char> reduce(static_cast<size_t>(r), 0);
  for (int a : axes) {
    detail::require(a >= 0 && a < r, "reduce_sum: axis out of range");
    reduce[static_cast<size_t>(a)] = 1;
  }
  Shape ys;
  Shape kept = xs;  // keepdims view used for index mapping
  for (int d = 0; d < r; ++d) {
    if (reduce[static_cast<size_t>(d)]) {
      kept[static_cast<size_t>(d)] = 1;
      if (keepdims) ys.push_back(1);
    } else {
      ys.push_back(xs[static_cast<size_t>(d)]);
    }
  }
  auto xst = detail::strides_of(xs);
  auto kst = detail::strides_of(kept);
  const int64_t n = x.size();
  auto to_out = [r, xst, kst, reduce](int64_t xi) {
    int64_t oi = 0;
    int64_t rem = xi;
    for (int d = 0; d < r; ++d) {
      int64_t c = rem / xst[static_cast<size_t>(d)];
      rem -= c * xst[static_cast<size_t>(d)];
      if (!reduce[static_cast<size_t>(d)]) oi += c * kst[static_cast<size_t>(d)];
    }
    return oi;
  };
  std::vector<T> yv(static_cast<size_t>(numel(ys)), T(0));
  const auto& xv = x.values();
  for (int64_t i = 0; i < n; ++i)
    yv[static_cast<size_t>(to_out(i))] += xv[static_cast<size_t>(i)];
  const int xid = x.id();
  auto backward = [xid, to_out, n](Graph<T>& g, int id) {
    const auto& gy = g.node(id).grad;
    auto& gx = g.grad_buffer(xid);
    for (int64_t i = 0; i < n; ++i)
      gx[static_cast<size_t>(i)] += gy[static_cast<size_t>(to_out(i))];
  };
  return x.graph()->make_node(std::move(ys), std::move(yv), {xid}, backward);
}

template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& x, const std::vector<int>& axes,
                      bool keepdims = false) {
  int64_t count = 1;
  for (int a : axes) count *= x.dim(a);
  return mul_scalar(reduce_sum(x, axes, keepdims), T(1) / T(count));
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  std::vector<int> axes(static_cast<size_t>(x.rank()));
  for (int i = 0; i < x.rank(); ++i) axes[static_cast<size_t>(i)] = i;
  return reduce_sum(x, axes, false);
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
  return mul_scalar(sum_all(x), T(1) / T(x.size()));
}

// ---- linear algebra ----

// y = op_a(A) * op_b(B), rank-2 operands, Eigen-backed.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_a = false,
                 bool trans_b = false) {
  detail::require(a.rank() == 2 && b.rank() == 2, "matmul: rank-2 required");
  using Mat = detail::MatRM<T>;
  using Map = Eigen::Map<const Mat>;
  const int am = a.dim(0), an = a.dim(1);
  const int bm = b.dim(0), bn = b.dim(1);
  const int m = trans_a ? an : am;
  const int k = trans_a ? am : an;
  const int k2 = trans_b ? bn : bm;
  const int n = trans_b ? bm : bn;
  detail::require(k == k2, "matmul: inner dims differ");
  Map A(a.values().data(), am, an);
  Map B(b.values().data(), bm, bn);
  Mat Y(m, n);
  if (!trans_a && !trans_b)
    Y.noalias() = A * B;
  else if (trans_a && !trans_b)
    Y.noalias() = A.transpose() * B;
  else if (!trans_a && trans_b)
    Y.noalias() = A * B.transpose();
  else
    Y.noalias() = A.transpose() * B.transpose();
  std::vector<T> yv(Y.data(), Y.data() + static_cast<int64_t>(m) * n);
  const int aid = a.id(), bid = b.id();
  auto backward = [aid, bid, am, an, bm, bn, m, n, trans_a,
                   trans_b](Graph<T>& g, int id) {
    Map GY(g.node(id).grad.data(), m, n);
    Map A(g.node(aid).value.data(), am, an);
    Map B(g.node(bid).value.data(), bm, bn);
    {
      auto& ga = g.grad_buffer(aid);
      Eigen::Map<Mat> GA(ga.data(), am, an);
      if (!trans_a && !trans_b)
        GA.noalias() += GY * B.transpose();
      else if (trans_a && !trans_b)
        GA.noalias() += B * GY.transpose();
      else if (!trans_a && trans_b)
        GA.noalias() += GY * B;
      else
        GA.noalias() += B.transpose() * GY.transpose();
    }
    {
      auto& gb = g.grad_buffer(bid);
      Eigen::Map<Mat> GB(gb.data(), bm, bn);
      if (!trans_a && !trans_b)
        GB.noalias() += A.transpose() * GY;
      else if (trans_a && !trans_b)
        GB.noalias() += A * GY;
      else if (!trans_a && trans_b)
        GB.noalias() += GY.transpose() * A;
      else
        GB.noalias() += GY.transpose() * A.transpose();
    }
  };
  return a.graph()->make_node(Shape{m, n}, std::move(yv), {aid, bid},
                              backward);
}

// ---- convolution ----

// x: (H,W,Ci), w: (Co,kh,kw,Ci), b: (Co). Zero padding, floor output size.
// im2col patches are cached for the backward GEMMs.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 int stride, int pad) {
  detail::require(x.rank() == 3 && w.rank() == 4 && b.rank() == 1,
                  "conv2d: x (H,W,Ci), w (Co,kh,kw,Ci), b (Co)");
  const int H = x.dim(0), W = x.dim(1), Ci = x.dim(2);
  const int Co = w.dim(0), kh = w.dim(1), kw = w.dim(2);
  detail::require(w.dim(3) == Ci, "conv2d: channel mismatch");
  detail::require(b.dim(0) == Co, "conv2d: bias size mismatch");
  detail::require(stride >= 1 && pad >= 0, "conv2d: bad stride/pad");
  const int OH = (H + 2 * pad - kh) / stride + 1;
  const int OW = (W + 2 * pad - kw) / stride + 1;
  detail::require(OH >= 1 && OW >= 1, "conv2d: empty output");
  using Mat = detail::MatRM<T>;
  const int K = kh * kw * Ci;
  auto P = std::make_shared<Mat>(OH * OW, K);
  const auto& xv = x.values();
  for (int oy = 0; oy < OH; ++oy)
    for (int ox = 0; ox < OW; ++ox) {
      T* row = P->data() + static_cast<int64_t>(oy * OW + ox) * K;
      int col = 0;
      for (int ky = 0; ky < kh; ++ky) {
        const int iy = oy * stride + ky - pad;
        for (int kx = 0; kx < kw; ++kx) {
          const int ix = ox * stride + kx - pad;
          if (iy >= 0 && iy < H && ix >= 0 && ix < W) {
            const T* src = xv.data() + (static_cast<int64_t>(iy) * W + ix) * Ci;
            for (int c = 0; c < Ci; ++c) row[col++] = src[c];
          } else {
            for (int c = 0; c < Ci; ++c) row[col++] = T(0);
          }
        }
      }
    }
  Eigen::Map<const Mat> Wm(w.values().data(), Co, K);
  Mat Y(OH * OW, Co);
  Y.noalias() = (*P) * Wm.transpose();
  const auto& bv = b.values();
  for (int i = 0; i < OH * OW; ++i)
    for (int c = 0; c < Co; ++c) Y(i, c) += bv[static_cast<size_t>(c)];
  std::vector<T> yv(Y.data(), Y.data() + static_cast<int64_t>(OH) * OW * Co);
  const int xid = x.id(), wid = w.id(), bid = b.id();
  auto backward = [xid, wid, bid, P, H, W, Ci, Co, kh, kw, stride, pad, OH,
                   OW, K](Graph<T>& g, int id) {
    Eigen::Map<const Mat> GY(g.node(id).grad.data(), OH * OW, Co);
    Eigen::Map<const Mat> Wm(g.node(wid).value.data(), Co, K);
    {
      auto& gw = g.grad_buffer(wid);
      Eigen::Map<Mat> GW(gw.data(), Co, K);
      GW.noalias() += GY.transpose() * (*P);
    }
    {
      auto& gb = g.grad_buffer(bid);
      for (int c = 0; c < Co; ++c)
        gb[static_cast<size_t>(c)] += GY.col(c).sum();
    }
    {
      Mat GP(OH * OW, K);
      GP.noalias() = GY * Wm;
      auto& gx = g.grad_buffer(xid);
      for (int oy = 0; oy < OH; ++oy)
        for (int ox = 0; ox < OW; ++ox) {
          const T* row = GP.data() + static_cast<int64_t>(oy * OW + ox) * K;
          int col = 0;
          for (int ky = 0; ky < kh; ++ky) {
            const int iy = oy * stride + ky - pad;
            for (int kx = 0; kx < kw; ++kx) {
              const int ix = ox * stride + kx - pad;
              if (iy >= 0 && iy < H && ix >= 0 && ix < W) {
                T* dst = gx.data() + (static_cast<int64_t>(iy) * W + ix) * Ci;
                for (int c = 0; c < Ci; ++c) dst[c] += row[col++];
              } else {
                col += Ci;
              }
            }
          }
        }
    }
  };
  return x.graph()->make_node(Shape{OH, OW, Co}, std::move(yv),
                              {xid, wid, bid}, backward, P);
}

// ---- resampling ----

namespace detail {
// Bilinear tap at (sx, sy) with border clamp. Writes the four corner
// indices/weights; inx/iny report whether the unclamped coordinate is in
// the region where the clamp is locally the identity (flow grads pass).
struct BilinearTap {
  int x0, x1, y0, y1;
  double fx, fy;
  bool inx, iny;
};

inline BilinearTap bilinear_tap(double sx, double sy, int W, int H) {
  BilinearTap t;
  t.inx = sx > 0.0 && sx < W - 1;
  t.iny = sy > 0.0 && sy < H - 1;
  double cx = std::min(std::max(sx, 0.0), static_cast<double>(W - 1));
  double cy = std::min(std::max(sy, 0.0), static_cast<double>(H - 1));
  t.x0 = static_cast<int>(std::floor(cx));
  t.y0 = static_cast<int>(std::floor(cy));
  if (t.x0 > W - 2) t.x0 = W > 1 ? W - 2 : 0;
  if (t.y0 > H - 2) t.y0 = H > 1 ? H - 2 : 0;
  t.x1 = std::min(t.x0 + 1, W - 1);
  t.y1 = std::min(t.y0 + 1, H - 1);
  t.fx = cx - t.x0;
  t.fy = cy - t.y0;
  return t;
}
}  // namespace detail

// out(y,x,c) = source(y + flow_v(y,x), x + flow_u(y,x), c), bilinear with
// border clamp. Differentiable in both source and flow; the flow gradient
// is zero where the sample point is clamped to the border.
template <typename T>
Tensor<T> warp_bilinear(const Tensor<T>& source, const Tensor<T>& flow) {
  detail::require(source.rank() == 3 && flow.rank() == 3 && flow.dim(2) == 2,
                  "warp_bilinear: source (H,W,C), flow (H,W,2)");
  detail::require(source.dim(0) == flow.dim(0) && source.dim(1) == flow.dim(1),
                  "warp_bilinear: spatial dims differ");
  const int H = source.dim(0), W = source.dim(1), C = source.dim(2);
  const auto& sv = source.values();
  const auto& fv = flow.values();
  std::vector<T> yv(static_cast<size_t>(H) * W * C);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const int64_t p = static_cast<int64_t>(y) * W + x;
      const double sx = x + static_cast<double>(fv[2 * p]);
      const double sy = y + static_cast<double>(fv[2 * p + 1]);
      auto t = detail::bilinear_tap(sx, sy, W, H);
      const T fx = static_cast<T>(t.fx), fy = static_cast<T>(t.fy);
      for (int c = 0; c < C; ++c) {
        const T i00 = sv[(static_cast<int64_t>(t.y0) * W + t.x0) * C + c];
        const T i01 = sv[(static_cast<int64_t>(t.y0) * W + t.x1) * C + c];
        const T i10 = sv[(static_cast<int64_t>(t.y1) * W + t.x0) * C + c];
        const T i11 = sv[(static_cast<int64_t>(t.y1) * W + t.x1) * C + c];
        // Two-product form: exact at integer sample points even when the
        // clamped tap puts the point on the far corner (fx or fy == 1).
        const T top = (T(1) - fx) * i00 + fx * i01;
        const T bot = (T(1) - fx) * i10 + fx * i11;
        yv[p * C + c] = (T(1) - fy) * top + fy * bot;
      }
    }
  const int sid = source.id(), fid = flow.id();
  auto backward = [sid, fid, H, W, C](Graph<T>& g, int id) {
    const auto& gy = g.node(id).grad;
    const auto& sv = g.node(sid).value;
    const auto& fv = g.node(fid).value;
    auto& gs = g.grad_buffer(sid);
    auto& gf = g.grad_buffer(fid);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const int64_t p = static_cast<int64_t>(y) * W + x;
        const double sx = x + static_cast<double>(fv[2 * p]);
        const double sy = y + static_cast<double>(fv[2 * p + 1]);
        auto t = detail::bilinear_tap(sx, sy, W, H);
        const T fx = static_cast<T>(t.fx), fy = static_cast<T>(t.fy);
        T du = T(0), dv = T(0);
        for (int c = 0; c < C; ++c) {
          const T go = gy[p * C + c];
          if (go == T(0)) continue;
          const int64_t i00 = (static_cast<int64_t>(t.y0) * W + t.x0) * C + c;
          const int64_t i01 = (static_cast<int64_t>(t.y0) * W + t.x1) * C + c;
          const int64_t i10 = (static_cast<int64_t>(t.y1) * W + t.x0) * C + c;
          const int64_t i11 = (static_cast<int64_t>(t.y1) * W + t.x1) * C + c;
          gs[i00] += go * (T(1) - fx) * (T(1) - fy);
          gs[i01] += go * fx * (T(1) - fy);
          gs[i10] += go * (T(1) - fx) * fy;
          gs[i11] += go * fx * fy;
          const T dx = (T(1) - fy) * (sv[i01] - sv[i00]) +
                       fy * (sv[i11] - sv[i10]);
          const T dy = (T(1) - fx) * (sv[i10] - sv[i00]) +
                       fx * (sv[i11] - sv[i01]);
          du += go * dx;
          dv += go * dy;
        }
        if (t.inx) gf[2 * p] += du;
        if (t.iny) gf[2 * p + 1] += dv;
      }
  };
  return source.graph()->make_node(Shape{H, W, C}, std::move(yv), {sid, fid},
                                   backward);
}

// out(y,x,c) = x(clamp(y+dy), clamp(x+dx), c). Integer shift with border
// clamp; adjoint scatters back to the clamped source locations.
template <typename T>
Tensor<T> shift2d(const Tensor<T>& x, int dy, int dx) {
  detail::require(x.rank() == 3, "shift2d: (H,W,C) required");
  const int H = x.dim(0), W = x.dim(1), C = x.dim(2);
  const auto& xv = x.values();
  std::vector<T> yv(xv.size());
  auto clampi = [](int v, int hi) { return v < 0 ? 0 : (v > hi ? hi : v); };
  for (int y = 0; y < H; ++y) {
    const int sy = clampi(y + dy, H - 1);
    for (int xq = 0; xq < W; ++xq) {
      const int sx = clampi(xq + dx, W - 1);
      const T* src = xv.data() + (static_cast<int64_t>(sy) * W + sx) * C;
      T* dst = yv.data() + (static_cast<int64_t>(y) * W + xq) * C;
      for (int c = 0; c < C; ++c) dst[c] = src[c];
    }
  }
  const int xid = x.id();
  auto backward = [xid, H, W, C, dy, dx](Graph<T>& g, int id) {
    const auto& gy = g.node(id).grad;
    auto& gx = g.grad_buffer(xid);
    auto clampi = [](int v, int hi) { return v < 0 ? 0 : (v > hi ? hi : v); };
    for (int y = 0; y < H; ++y) {
      const int sy = clampi(y + dy, H - 1);
      for (int xq = 0; xq < W; ++xq) {
        const int sx = clampi(xq + dx, W - 1);
        T* dst = gx.data() + (static_cast<int64_t>(sy) * W + sx) * C;
        const T* src = gy.data() + (static_cast<int64_t>(y) * W + xq) * C;
        for (int c = 0; c < C; ++c) dst[c] += src[c];
      }
    }
  };
  return x.graph()->make_node(Shape{H, W, C}, std::move(yv), {xid}, backward);
}

// (H,W,C) -> (H*s, W*s, C); half-pixel-aligned bilinear (align_corners
// false), border clamp.
template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& x, int scale) {
  detail::require(x.rank() == 3, "upsample_bilinear: (H,W,C) required");
  detail::require(scale >= 1, "upsample_bilinear: scale >= 1");
  const int H = x.dim(0), W = x.dim(1), C = x.dim(2);
  const int OH = H * scale, OW = W * scale;
  const auto& xv = x.values();
  std::vector<T> yv(static_cast<size_t>(OH) * OW * C);
  for (int oy = 0; oy < OH; ++oy) {
    const double sy = (oy + 0.5) / scale - 0.5;
    for (int ox = 0; ox < OW; ++ox) {
      const double sx = (ox + 0.5) / scale - 0.5;
      auto t = detail::bilinear_tap(sx, sy, W, H);
      for (int c = 0; c < C; ++c) {
        const T i00 = xv[(static_cast<int64_t>(t.y0) * W + t.x0) * C + c];
        const T i01 = xv[(static_cast<int64_t>(t.y0) * W + t.x1) * C + c];
        const T i10 = xv[(static_cast<int64_t>(t.y1) * W + t.x0) * C + c];
        const T i11 = xv[(static_cast<int64_t>(t.y1) * W + t.x1) * C + c];
        const T top = i00 + static_cast<T>(t.fx) * (i01 - i00);
        const T bot = i10 + static_cast<T>(t.fx) * (i11 - i10);
        yv[(static_cast<int64_t>(oy) * OW + ox) * C + c] =
            top + static_cast<T>(t.fy) * (bot - top);
      }
    }
  }
  const int xid = x.id();
  auto backward = [xid, H, W, C, scale, OH, OW](Graph<T>& g, int id) {
    const auto& gy = g.node(id).grad;
    auto& gx = g.grad_buffer(xid);
    for (int oy = 0; oy < OH; ++oy) {
      const double sy = (oy + 0.5) / scale - 0.5;
      for (int ox = 0; ox < OW; ++ox) {
        const double sx = (ox + 0.5) / scale - 0.5;
        auto t = detail::bilinear_tap(sx, sy, W, H);
        const T fx = static_cast<T>(t.fx), fy = static_cast<T>(t.fy);
        for (int c = 0; c < C; ++c) {
          const T go = gy[(static_cast<int64_t>(oy) * OW + ox) * C + c];
          if (go == T(0)) continue;
          gx[(static_cast<int64_t>(t.y0) * W + t.x0) * C + c] +=
              go * (T(1) - fx) * (T(1) - fy);
          gx[(static_cast<int64_t>(t.y0) * W + t.x1) * C + c] +=
              go * fx * (T(1) - fy);
          gx[(static_cast<int64_t>(t.y1) * W + t.x0) * C + c] +=
              go * (T(1) - fx) * fy;
          gx[(static_cast<int64_t>(t.y1) * W + t.x1) * C + c] += go * fx * fy;
        }
      }
    }
  };
  return x.graph()->make_node(Shape{OH, OW, C}, std::move(yv), {xid},
                              backward);
}

// (N,h,w) -> (N,h/2,w/2): 2x2 mean with stride 2 per leading slice. Used to
// build coarser correlation pyramid levels; h and w must be even.
template <typename T>
Tensor<T> avg_pool2x2(const Tensor<T>& x) {
  detail::require(x.rank() == 3, "avg_pool2x2: (N,h,w) required");
  const int N = x.dim(0), h = x.dim(1), w = x.dim(2);
  detail::require(h % 2 == 0 && w % 2 == 0, "avg_pool2x2: odd extent");
  const int oh = h / 2, ow = w / 2;
  const auto& xv = x.values();
  std::vector<T> yv(static_cast<size_t>(N) * oh * ow);
  for (int n = 0; n < N; ++n)
    for (int y = 0; y < oh; ++y)
      for (int xq = 0; xq < ow; ++xq) {
        const int64_t base =
            (static_cast<int64_t>(n) * h + 2 * y) * w + 2 * xq;
        yv[(static_cast<int64_t>(n) * oh + y) * ow + xq] =
            (xv[base] + xv[base + 1] + xv[base + w] + xv[base + w + 1]) *
            T(0.25);
      }
  const int xid = x.id();
  auto backward = [xid, N, h, w, oh, ow](Graph<T>& g, int id) {
    const auto& gy = g.node(id).grad;
    auto& gx = g.grad_buffer(xid);
    for (int n = 0; n < N; ++n)
      for (int y = 0; y < oh; ++y)
        for (int xq = 0; xq < ow; ++xq) {
          const T go =
              gy[(static_cast<int64_t>(n) * oh + y) * ow + xq] * T(0.25);
          const int64_t base =
              (static_cast<int64_t>(n) * h + 2 * y) * w + 2 * xq;
          gx[base] += go;
          gx[base + 1] += go;
          gx[base + w] += go;
          gx[base + w + 1] += go;
        }
  };
  return x.graph()->make_node(Shape{N, oh, ow}, std::move(yv), {xid},
                              backward);
}

// Correlation pyramid lookup. level: (H*W, h, w), one h-by-w correlation
// slice per query pixel of the H-by-W feature grid; flow: (H,W,2) in
// feature-grid pixels. Samples a (2r+1)^2 window centered at
// (p + flow(p)) * scale in level coordinates (scale = 1/2^l), bilinear with
// border clamp. Output (H,W,(2r+1)^2), window scanned dy-major.
template <typename T>
Tensor<T> corr_lookup(const Tensor<T>& level, const Tensor<T>& flow,
                      int radius, double scale) {
  detail::require(level.rank() == 3 && flow.rank() == 3 && flow.dim(2) == 2,
                  "corr_lookup: level (N,h,w), flow (H,W,2)");
  const int H = flow.dim(0), W = flow.dim(1);
  detail::require(level.dim(0) == H * W, "corr_lookup: N != H*W");
  detail::require(radius >= 0 && scale > 0, "corr_lookup: bad radius/scale");
  const int h = level.dim(1), w = level.dim(2);
  const int D = 2 * radius + 1;
  const auto& lv = level.values();
  const auto& fv = flow.values();
  std::vector<T> yv(static_cast<size_t>(H) * W * D * D);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const int64_t p = static_cast<int64_t>(y) * W + x;
      const double cx = (x + static_cast<double>(fv[2 * p])) * scale;
      const double cy = (y + static_cast<double>(fv[2 * p + 1])) * scale;
      const T* sl = lv.data() + p * h * w;
      T* dst = yv.data() + p * D * D;
      for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx) {
          auto t = detail::bilinear_tap(cx + dx, cy + dy, w, h);
          const T i00 = sl[static_cast<int64_t>(t.y0) * w + t.x0];
          const T i01 = sl[static_cast<int64_t>(t.y0) * w + t.x1];
          const T i10 = sl[static_cast<int64_t>(t.y1) * w + t.x0];
          const T i11 = sl[static_cast<int64_t>(t.y1) * w + t.x1];
          const T top = i00 + static_cast<T>(t.fx) * (i01 - i00);
          const T bot = i10 + static_cast<T>(t.fx) * (i11 - i10);
          *dst++ = top + static_cast<T>(t.fy) * (bot - top);
        }
    }
  const int lid = level.id(), fid = flow.id();
  auto backward = [lid, fid, H, W, h, w, radius, scale](Graph<T>& g, int id) {
    const int D = 2 * radius + 1;
    const auto& gy = g.node(id).grad;
    const auto& lv = g.node(lid).value;
    const auto& fv = g.node(fid).value;
    auto& gl = g.grad_buffer(lid);
    auto& gf = g.grad_buffer(fid);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const int64_t p = static_cast<int64_t>(y) * W + x;
        const double cx = (x + static_cast<double>(fv[2 * p])) * scale;
        const double cy = (y + static_cast<double>(fv[2 * p + 1])) * scale;
        const T* sl = lv.data() + p * h * w;
        T* gsl = gl.data() + p * h * w;
        const T* go = gy.data() + p * D * D;
        T du = T(0), dv = T(0);
        int k = 0;
        for (int dy = -radius; dy <= radius; ++dy)
          for (int dx = -radius; dx <= radius; ++dx, ++k) {
            const T gk = go[k];
            if (gk == T(0)) continue;
            auto t = detail::bilinear_tap(cx + dx, cy + dy, w, h);
            const T fx = static_cast<T>(t.fx), fy = static_cast<T>(t.fy);
            const int64_t i00 = static_cast<int64_t>(t.y0) * w + t.x0;
            const int64_t i01 = static_cast<int64_t>(t.y0) * w + t.x1;
            const int64_t i10 = static_cast<int64_t>(t.y1) * w + t.x0;
            const int64_t i11 = static_cast<int64_t>(t.y1) * w + t.x1;
            gsl[i00] += gk * (T(1) - fx) * (T(1) - fy);
            gsl[i01] += gk * fx * (T(1) - fy);
            gsl[i10] += gk * (T(1) - fx) * fy;
            gsl[i11] += gk * fx * fy;
            if (t.inx)
              du += gk * static_cast<T>(scale) *
                    ((T(1) - fy) * (sl[i01] - sl[i00]) +
                     fy * (sl[i11] - sl[i10]));
            if (t.iny)
              dv += gk * static_cast<T>(scale) *
                    ((T(1) - fx) * (sl[i10] - sl[i00]) +
                     fx * (sl[i11] - sl[i01]));
          }
        gf[2 * p] += du;
        gf[2 * p + 1] += dv;
      }
  };
  return level.graph()->make_node(Shape{H, W, D * D}, std::move(yv),
                                  {lid, fid}, backward);
}

// ---- operator sugar (elementwise, same shape) ----

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) {
  return add(a, b);
}
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) {
  return sub(a, b);
}
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) {
  return mul(a, b);
}
template <typename T>
Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) {
  return div(a, b);
}
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, T c) {
  return mul_scalar(a, c);
}
template <typename T>
Tensor<T> operator*(T c, const Tensor<T>& a) {
  return mul_scalar(a, c);
}
template <typename T>
Tensor<T> operator+(const Tensor<T>& a, T c) {
  return add_scalar(a, c);
}
template <typename T>
Tensor<T> operator-(const Tensor<T>& a) {
  return neg(a);
}

}  // namespace u2flow
