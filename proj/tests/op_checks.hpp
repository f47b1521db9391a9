#pragma once

#include <functional>
#include <string>
#include <vector>

#include "u2flow/grad_check.hpp"
#include "u2flow/ops.hpp"

// Registry of per-op finite-difference checks, shared between the unit suite
// and the acceptance binary. Each entry builds seeded random inputs, runs the
// op inside a scalar-producing expression, and compares analytic gradients
// against central differences.

namespace u2flow_test {

struct OpCheck {
  std::string name;
  std::function<u2flow::GradCheckResult(uint64_t seed)> run;
};

inline std::vector<OpCheck> all_op_checks() {
  using namespace u2flow;
  std::vector<OpCheck> checks;
  auto add_check = [&](std::string name,
                       std::function<GradCheckResult(uint64_t)> fn) {
    checks.push_back({std::move(name), std::move(fn)});
  };

  // Weighted sum readout so every output coordinate influences the scalar
  // with a distinct coefficient (catches transposed/permuted adjoints).
  auto readout = [](Graph<double>& g, const Tensor<double>& y) {
    std::vector<double> w(static_cast<size_t>(y.size()));
    for (size_t i = 0; i < w.size(); ++i)
      w[i] = 0.25 + 0.75 * std::sin(1.7 * static_cast<double>(i + 1));
    Shape flat{static_cast<int>(y.size())};
    return sum_all(mul(reshape(y, flat), g.constant(flat, w)));
  };

  auto ew_binary = [readout](auto op) {
    return [readout, op](uint64_t seed) {
      Shape s{3, 4};
      return grad_check(
          {s, s},
          {random_values(s, seed * 11 + 1, 0.4, 1.9),
           random_values(s, seed * 11 + 2, 0.4, 1.9)},
          [readout, op](Graph<double>& g,
                        const std::vector<Tensor<double>>& in) {
            return readout(g, op(in[0], in[1]));
          });
    };
  };
  add_check("add", ew_binary([](auto a, auto b) { return add(a, b); }));
  add_check("sub", ew_binary([](auto a, auto b) { return sub(a, b); }));
  add_check("mul", ew_binary([](auto a, auto b) { return mul(a, b); }));
  add_check("div", ew_binary([](auto a, auto b) { return div(a, b); }));

  auto ew_unary = [readout](auto op, double lo, double hi) {
    return [readout, op, lo, hi](uint64_t seed) {
      Shape s{2, 5};
      return grad_check(
          {s}, {random_values(s, seed * 13 + 3, lo, hi)},
          [readout, op](Graph<double>& g,
                        const std::vector<Tensor<double>>& in) {
            return readout(g, op(in[0]));
          });
    };
  };
  add_check("exp", ew_unary([](auto x) { return exp_op(x); }, -1.5, 1.5));
  add_check("log", ew_unary([](auto x) { return log_op(x); }, 0.3, 3.0));
  add_check("sqrt", ew_unary([](auto x) { return sqrt_op(x); }, 0.2, 4.0));
  add_check("sigmoid",
            ew_unary([](auto x) { return sigmoid(x); }, -3.0, 3.0));
  add_check("tanh", ew_unary([](auto x) { return tanh_op(x); }, -2.0, 2.0));
  // Kinked ops probed away from their kinks.
  add_check("relu_pos", ew_unary([](auto x) { return relu(x); }, 0.2, 2.0));
  add_check("relu_neg", ew_unary([](auto x) { return relu(x); }, -2.0, -0.2));
  add_check("abs_pos", ew_unary([](auto x) { return abs_op(x); }, 0.2, 2.0));
  add_check("abs_neg", ew_unary([](auto x) { return abs_op(x); }, -2.0, -0.2));
  add_check("pow",
            ew_unary([](auto x) { return pow_scalar(x, 1.7); }, 0.3, 2.0));
  add_check("clamp_min",
            ew_unary([](auto x) { return clamp_min(x, 0.5); }, 0.8, 2.0));
  add_check("clamp_max",
            ew_unary([](auto x) { return clamp_max(x, 0.5); }, 0.8, 2.0));
  add_check("add_scalar",
            ew_unary([](auto x) { return add_scalar(x, 0.7); }, -1.0, 1.0));
  add_check("mul_scalar",
            ew_unary([](auto x) { return mul_scalar(x, -1.3); }, -1.0, 1.0));
  add_check("sub_from_scalar", ew_unary(
      [](auto x) { return sub_from_scalar(2.0, x); }, -1.0, 1.0));

  add_check("reduce_sum_axis0", [readout](uint64_t seed) {
    Shape s{3, 4, 2};
    return grad_check(
        {s}, {random_values(s, seed + 40)},
        [readout](Graph<double>& g, const std::vector<Tensor<double>>& in) {
          return readout(g, reduce_sum(in[0], {0}, false));
        });
  });
  add_check("reduce_sum_keepdims", [readout](uint64_t seed) {
    Shape s{3, 4, 2};
    return grad_check(
        {s}, {random_values(s, seed + 41)},
        [readout](Graph<double>& g, const std::vector<Tensor<double>>& in) {
          return readout(g, reduce_sum(in[0], {1, 2}, true));
        });
  });
  add_check("reduce_mean", [readout](uint64_t seed) {
    Shape s{4, 3};
    return grad_check(
        {s}, {random_values(s, seed + 42)},
        [readout](Graph<double>& g, const std::vector<Tensor<double>>& in) {
          return readout(g, reduce_mean(in[0], {0}, false));
        });
  });
  add_check("mean_all", [](uint64_t seed) {
    Shape s{5, 3};
    return grad_check(
        {s}, {random_values(s, seed + 43)},
        [](Graph<double>& g, const std::vector<Tensor<double>>& in) {
          (void)g;
          return mean_all(in[0]);
        });
  });

  add_check("broadcast_to", [readout](uint64_t seed) {
    Shape s{1, 4, 1};
    return grad_check(
        {s}, {random_values(s, seed + 44)},
        [readout](Graph<double>& g, const std::vector<Tensor<double>>& in) {
          return readout(g, broadcast_to(in[0], Shape{3, 4, 2}));
        });
  });
  add_check("broadcast_rank_up", [readout](uint64_t seed) {
    Shape s{4};
    return grad_check(
        {s}, {random_values(s, seed + 45)},
        [readout](Graph<double>& g, const std::vector<Tensor<double>>& in) {
          return readout(g, broadcast_to(in[0], Shape{2, 3, 4}));
        });
  });

  add_check("concat_axis2", [readout](uint64_t seed) {
    Shape a{2, 3, 2}, b{2, 3, 1}, c{2, 3, 3};
    return grad_check(
        {a, b, c},
        {random_values(a, seed + 46), random_values(b, seed + 47),
         random_values(c, seed + 48)},
        [readout](Graph<double>& g, const std::vector<Tensor<double>>& in) {
          return readout(g, concat<double>({in[0], in[1], in[2]}, 2));
        });
  });
  add_check("concat_axis0", [readout](uint64_t seed) {
    Shape a{2, 3}, b{1, 3};
    return grad_check(
        {a, b},
        {random_values(a, seed + 49), random_values(b, seed + 50)},
        [readout](Graph<double>& g, const std::vector<Tensor<double>>& in) {
          return readout(g, concat<double>({in[0], in[1]}, 0));
        });
  });

  add_check("slice", [readout](uint64_t seed) {
    Shape s{4, 5, 3};
    return grad_check(
        {s}, {random_values(s, seed + 51)},
        [readout](Graph<double>& g, const std::vector<Tensor<double>>& in) {
          return readout(g, slice(in[0], {1, 0, 1}, {2, 4, 2}));
        });
  });
  add_check("reshape", [readout](uint64_t seed) {
    Shape s{4, 6};
    return grad_check(
        {s}, {random_values(s, seed + 52)},
        [readout](Graph<double>& g, const std::vector<Tensor<double>>& in) {
          return readout(g, reshape(in[0], Shape{2, 3, 4}));
        });
  });

  auto mm = [readout](bool ta, bool tb) {
    return [readout, ta, tb](uint64_t seed) {
      Shape a = ta ? Shape{4, 3} : Shape{3, 4};
      Shape b = tb ? Shape{5, 4} : Shape{4, 5};
      return grad_check(
          {a, b},
          {random_values(a, seed + 53), random_values(b, seed + 54)},
          [readout, ta, tb](Graph<double>& g,
                            const std::vector<Tensor<double>>& in) {
            return readout(g, matmul(in[0], in[1], ta, tb));
          });
    };
  };
  add_check("matmul_nn", mm(false, false));
  add_check("matmul_tn", mm(true, false));
  add_check("matmul_nt", mm(false, true));
  add_check("matmul_tt", mm(true, true));

  auto conv = [readout](int stride, int pad) {
    return [readout, stride, pad](uint64_t seed) {
      Shape xs{5, 6, 3}, ws{4, 3, 3, 3}, bs{4};
      return grad_check(
          {xs, ws, bs},
          {random_values(xs, seed + 55), random_values(ws, seed + 56, -0.5, 0.5),
           random_values(bs, seed + 57, -0.5, 0.5)},
          [readout, stride, pad](Graph<double>& g,
                                 const std::vector<Tensor<double>>& in) {
            return readout(g, conv2d(in[0], in[1], in[2], stride, pad));
          });
    };
  };
  add_check("conv2d_s1", conv(1, 1));
  add_check("conv2d_s2", conv(2, 1));
  add_check("conv2d_1x1", [readout](uint64_t seed) {
    Shape xs{4, 4, 5}, ws{3, 1, 1, 5}, bs{3};
    return grad_check(
        {xs, ws, bs},
        {random_values(xs, seed + 58), random_values(ws, seed + 59),
         random_values(bs, seed + 60)},
        [readout](Graph<double>& g, const std::vector<Tensor<double>>& in) {
          return readout(g, conv2d(in[0], in[1], in[2], 1, 0));
        });
  });

  add_check("warp_bilinear", [readout](uint64_t seed) {
    Shape ss{6, 7, 2}, fs{6, 7, 2};
    return grad_check(
        {ss, fs},
        {random_values(ss, seed + 61), random_values(fs, seed + 62, -1.4, 1.4)},
        [readout](Graph<double>& g, const std::vector<Tensor<double>>& in) {
          return readout(g, warp_bilinear(in[0], in[1]));
        });
  });
  add_check("shift2d", [readout](uint64_t seed) {
    Shape s{5, 6, 2};
    return grad_check(
        {s}, {random_values(s, seed + 63)},
        [readout](Graph<double>& g, const std::vector<Tensor<double>>& in) {
          return readout(g, shift2d(in[0], -2, 1));
        });
  });
  add_check("upsample_bilinear", [readout](uint64_t seed) {
    Shape s{3, 4, 2};
    return grad_check(
        {s}, {random_values(s, seed + 64)},
        [readout](Graph<double>& g, const std::vector<Tensor<double>>& in) {
          return readout(g, upsample_bilinear(in[0], 4));
        });
  });
  add_check("avg_pool2x2", [readout](uint64_t seed) {
    Shape s{3, 4, 6};
    return grad_check(
        {s}, {random_values(s, seed + 65)},
        [readout](Graph<double>& g, const std::vector<Tensor<double>>& in) {
          return readout(g, avg_pool2x2(in[0]));
        });
  });

  auto lookup = [readout](int radius, double scale, int h, int w) {
    return [readout, radius, scale, h, w](uint64_t seed) {
      const int H = 3, W = 4;
      Shape ls{H * W, h, w}, fs{H, W, 2};
      return grad_check(
          {ls, fs},
          {random_values(ls, seed + 66),
           random_values(fs, seed + 67, -0.9, 0.9)},
          [readout, radius, scale](Graph<double>& g,
                                   const std::vector<Tensor<double>>& in) {
            return readout(g, corr_lookup(in[0], in[1], radius, scale));
          });
    };
  };
  add_check("corr_lookup_l0", lookup(2, 1.0, 3, 4));
  add_check("corr_lookup_l1", lookup(1, 0.5, 2, 2));

  // detach is deliberately absent: finite differences would re-derive the
  // detached branch from the perturbed input. Its stop-gradient semantics
  // are asserted exactly in the unit suite instead.

  return checks;
}

}  // namespace u2flow_test
