#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "u2flow/ops.hpp"
#include "u2flow/tensor.hpp"

// Central-difference gradient checking. Always runs in double: the checked
// expression is rebuilt from scratch for every probe, so anything expressible
// as build(graph, leaves) -> scalar can be validated, including full model
// forwards.

namespace u2flow {

struct GradCheckResult {
  bool ok = true;
  double max_err = 0.0;    // worst |analytic - numeric| / max(1,|a|,|n|)
  int worst_input = -1;    // which leaf
  int64_t worst_coord = -1;
  double analytic = 0.0;
  double numeric = 0.0;

  std::string message() const {
    if (ok) return "grad_check ok, max_err=" + std::to_string(max_err);
    return "grad_check FAILED: input " + std::to_string(worst_input) +
           " coord " + std::to_string(worst_coord) +
           " analytic=" + std::to_string(analytic) +
           " numeric=" + std::to_string(numeric) +
           " err=" + std::to_string(max_err);
  }
};

using BuildFn = std::function<Tensor<double>(
    Graph<double>&, const std::vector<Tensor<double>>&)>;

struct GradCheckOptions {
  double eps = 1e-5;
  double tol = 1e-4;
  // Probe at most this many coordinates per input (seeded choice without
  // replacement); <= 0 probes everything.
  int max_coords = -1;
  uint64_t seed = 0;
};

namespace detail {
inline double eval_scalar(const BuildFn& build,
                          const std::vector<Shape>& shapes,
                          const std::vector<std::vector<double>>& values) {
  Graph<double> g;
  std::vector<Tensor<double>> leaves;
  leaves.reserve(shapes.size());
  for (size_t i = 0; i < shapes.size(); ++i)
    leaves.push_back(g.parameter(shapes[i], values[i]));
  Tensor<double> y = build(g, leaves);
  require(y.size() == 1, "grad_check: build must return a scalar");
  return y.value();
}
}  // namespace detail

inline GradCheckResult grad_check(const std::vector<Shape>& shapes,
                                  std::vector<std::vector<double>> values,
                                  const BuildFn& build,
                                  const GradCheckOptions& opt = {}) {
  detail::require(shapes.size() == values.size(),
                  "grad_check: shapes/values size mismatch");
  // Analytic pass.
  std::vector<std::vector<double>> analytic(shapes.size());
  {
    Graph<double> g;
    std::vector<Tensor<double>> leaves;
    for (size_t i = 0; i < shapes.size(); ++i)
      leaves.push_back(g.parameter(shapes[i], values[i]));
    Tensor<double> y = build(g, leaves);
    detail::require(y.size() == 1, "grad_check: build must return a scalar");
    g.backward(y);
    for (size_t i = 0; i < leaves.size(); ++i) analytic[i] = g.grad(leaves[i]);
  }
  GradCheckResult res;
  std::mt19937_64 rng(opt.seed);
  for (size_t i = 0; i < shapes.size(); ++i) {
    const int64_t n = static_cast<int64_t>(values[i].size());
    std::vector<int64_t> coords;
    if (opt.max_coords > 0 && n > opt.max_coords) {
      // Seeded sample without replacement.
      std::vector<int64_t> all(static_cast<size_t>(n));
      for (int64_t j = 0; j < n; ++j) all[static_cast<size_t>(j)] = j;
      for (int j = 0; j < opt.max_coords; ++j) {
        std::uniform_int_distribution<int64_t> pick(j, n - 1);
        std::swap(all[static_cast<size_t>(j)],
                  all[static_cast<size_t>(pick(rng))]);
        coords.push_back(all[static_cast<size_t>(j)]);
      }
    } else {
      for (int64_t j = 0; j < n; ++j) coords.push_back(j);
    }
    for (int64_t j : coords) {
      const double orig = values[i][static_cast<size_t>(j)];
      values[i][static_cast<size_t>(j)] = orig + opt.eps;
      const double fp = detail::eval_scalar(build, shapes, values);
      values[i][static_cast<size_t>(j)] = orig - opt.eps;
      const double fm = detail::eval_scalar(build, shapes, values);
      values[i][static_cast<size_t>(j)] = orig;
      const double num = (fp - fm) / (2.0 * opt.eps);
      const double ana = analytic[i][static_cast<size_t>(j)];
      const double err = std::abs(ana - num) /
                         std::max({1.0, std::abs(ana), std::abs(num)});
      if (err > res.max_err) {
        res.max_err = err;
        res.worst_input = static_cast<int>(i);
        res.worst_coord = j;
        res.analytic = ana;
        res.numeric = num;
      }
    }
  }
  res.ok = res.max_err <= opt.tol;
  return res;
}

// Uniform values in [lo, hi), seeded; the standard way tests build probe
// inputs.
inline std::vector<double> random_values(const Shape& shape, uint64_t seed,
                                         double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(static_cast<size_t>(numel(shape)));
  for (auto& x : v) x = dist(rng);
  return v;
}

}  // namespace u2flow
