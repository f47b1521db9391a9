#pragma once
// Flow accuracy metrics (mean endpoint error, outlier percentage) and
// uncertainty-quality metrics (sparsification curves, area under the
// sparsification error curve, Spearman rank correlation).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "u2flow/error.hpp"
#include "u2flow/image.hpp"

namespace u2flow {

inline ScalarMap epe_map(const FlowField& pred, const FlowField& gt) {
  detail::require(pred.width == gt.width && pred.height == gt.height,
                  "epe_map: prediction and ground truth sizes differ");
  ScalarMap m(pred.width, pred.height);
  const size_t n = m.data.size();
  for (size_t i = 0; i < n; ++i) {
    const double du = static_cast<double>(pred.data[2 * i]) - gt.data[2 * i];
    const double dv =
        static_cast<double>(pred.data[2 * i + 1]) - gt.data[2 * i + 1];
    m.data[i] = static_cast<float>(std::sqrt(du * du + dv * dv));
  }
  return m;
}

// Mean endpoint error over valid (nonzero-mask) pixels.
inline double epe(const FlowField& pred, const FlowField& gt,
                  const MaskImage& valid) {
  detail::require(valid.width == pred.width && valid.height == pred.height,
                  "epe: mask size differs from flow size");
  const ScalarMap m = epe_map(pred, gt);
  double sum = 0;
  long count = 0;
  for (size_t i = 0; i < m.data.size(); ++i)
    if (valid.data[i]) {
      sum += m.data[i];
      ++count;
    }
  if (count == 0) throw DegenerateMaskError("epe: no valid pixels");
  return sum / count;
}

// Percentage of valid pixels whose endpoint error exceeds both 3 px and 5%
// of the ground-truth magnitude. `region` further restricts the pixel set.
inline double fl_rate(const FlowField& pred, const FlowField& gt,
                      const MaskImage& valid,
                      const MaskImage* region = nullptr) {
  detail::require(valid.width == pred.width && valid.height == pred.height,
                  "fl_rate: mask size differs from flow size");
  if (region)
    detail::require(region->width == pred.width &&
                        region->height == pred.height,
                    "fl_rate: region size differs from flow size");
  long count = 0, outliers = 0;
  for (int y = 0; y < pred.height; ++y)
    for (int x = 0; x < pred.width; ++x) {
      const size_t i = static_cast<size_t>(y) * pred.width + x;
      if (!valid.data[i]) continue;
      if (region && !region->data[i]) continue;
      ++count;
      const double du = static_cast<double>(pred.u(y, x)) - gt.u(y, x);
      const double dv = static_cast<double>(pred.v(y, x)) - gt.v(y, x);
      const double e = std::sqrt(du * du + dv * dv);
      const double mag = std::sqrt(static_cast<double>(gt.u(y, x)) * gt.u(y, x) +
                                   static_cast<double>(gt.v(y, x)) * gt.v(y, x));
      if (e > 3.0 && e > 0.05 * mag) ++outliers;
    }
  if (count == 0) throw DegenerateMaskError("fl_rate: no valid pixels");
  return 100.0 * outliers / count;
}

// Sparsification grid: fractions 0, 0.02, ..., 1. At fraction i/50 with n
// valid pixels, floor(i*n/50) pixels are removed in descending key order.
inline constexpr int kSparsificationSteps = 50;

struct SparsificationResult {
  std::vector<double> fractions;
  std::vector<double> err_by_uncertainty;
  std::vector<double> err_by_oracle;
  bool degenerate = false;  // full-set error was zero; curves are all zeros
};

namespace detail {

// Mean of the retained errors after removing the top-`key` share at each
// grid fraction. Ties in the key are broken by pixel index (stable sort).
inline std::vector<double> removal_curve(const std::vector<double>& err,
                                         const std::vector<double>& key) {
  const int n = static_cast<int>(err.size());
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return key[static_cast<size_t>(a)] >
                                              key[static_cast<size_t>(b)]; });
  std::vector<double> curve(kSparsificationSteps + 1);
  for (int i = 0; i <= kSparsificationSteps; ++i) {
    const int k = static_cast<int>(static_cast<long long>(i) * n /
                                   kSparsificationSteps);
    const int keep = n - k;
    if (keep == 0) {
      curve[static_cast<size_t>(i)] = 0.0;
      continue;
    }
    double s = 0;
    for (int j = k; j < n; ++j)
      s += err[static_cast<size_t>(order[static_cast<size_t>(j)])];
    curve[static_cast<size_t>(i)] = s / keep;
  }
  return curve;
}

}  // namespace detail

// Error curves obtained by progressively removing the most-uncertain
// (resp. truly-worst) pixels, both normalized by the full-set mean error.
// Works for any nonzero pixel count; realistic callers should pass at
// least ~50 valid pixels for the 0.02 grid to resolve distinct subsets.
inline SparsificationResult sparsification(const ScalarMap& err,
                                           const ScalarMap& uncertainty,
                                           const MaskImage& valid) {
  detail::require(err.width == uncertainty.width &&
                      err.height == uncertainty.height &&
                      err.width == valid.width && err.height == valid.height,
                  "sparsification: input sizes differ");
  std::vector<double> e, u;
  for (size_t i = 0; i < err.data.size(); ++i)
    if (valid.data[i]) {
      e.push_back(err.data[i]);
      u.push_back(uncertainty.data[i]);
    }
  if (e.empty())
    throw DegenerateMaskError("sparsification: no valid pixels");

  SparsificationResult r;
  r.fractions.resize(kSparsificationSteps + 1);
  for (int i = 0; i <= kSparsificationSteps; ++i)
    r.fractions[static_cast<size_t>(i)] =
        static_cast<double>(i) / kSparsificationSteps;
  r.err_by_uncertainty = detail::removal_curve(e, u);
  r.err_by_oracle = detail::removal_curve(e, e);
  const double full = r.err_by_oracle[0];
  if (full == 0.0) {
    std::fill(r.err_by_uncertainty.begin(), r.err_by_uncertainty.end(), 0.0);
    std::fill(r.err_by_oracle.begin(), r.err_by_oracle.end(), 0.0);
    r.degenerate = true;
    return r;
  }
  for (auto& v : r.err_by_uncertainty) v /= full;
  for (auto& v : r.err_by_oracle) v /= full;
  return r;
}

// Trapezoidal area between the uncertainty curve and the oracle curve.
// The oracle is optimal by construction, so the gap is clamped at zero to
// keep rounding noise from producing a negative area.
inline double ause(const SparsificationResult& s) {
  detail::require(s.fractions.size() == s.err_by_uncertainty.size() &&
                      s.fractions.size() == s.err_by_oracle.size() &&
                      s.fractions.size() >= 2,
                  "ause: malformed sparsification result");
  double area = 0;
  for (size_t i = 1; i < s.fractions.size(); ++i) {
    const double d0 =
        std::max(0.0, s.err_by_uncertainty[i - 1] - s.err_by_oracle[i - 1]);
    const double d1 =
        std::max(0.0, s.err_by_uncertainty[i] - s.err_by_oracle[i]);
    area += 0.5 * (d0 + d1) * (s.fractions[i] - s.fractions[i - 1]);
  }
  return area;
}

namespace detail {

// 1-based ranks; tied values share the average of their rank range.
inline std::vector<double> fractional_ranks(const std::vector<double>& v) {
  const size_t n = v.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return v[a] < v[b]; });
  std::vector<double> rank(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * (static_cast<double>(i + 1) +
                              static_cast<double>(j + 1));
    for (size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  return rank;
}

inline std::optional<double> pearson(const std::vector<double>& x,
                                     const std::vector<double>& y) {
  const size_t n = x.size();
  double mx = 0, my = 0;
  for (size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double cov = 0, vx = 0, vy = 0;
  for (size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    cov += dx * dy;
    vx += dx * dx;
    vy += dy * dy;
  }
  if (vx <= 0 || vy <= 0) return std::nullopt;
  return cov / std::sqrt(vx * vy);
}

}  // namespace detail

// Pearson correlation of fractional ranks. Absent when either side has
// zero rank variance (e.g. a constant map).
inline std::optional<double> spearman_cc(const ScalarMap& uncertainty,
                                         const ScalarMap& err,
                                         const MaskImage& valid) {
  detail::require(err.width == uncertainty.width &&
                      err.height == uncertainty.height &&
                      err.width == valid.width && err.height == valid.height,
                  "spearman_cc: input sizes differ");
  std::vector<double> u, e;
  for (size_t i = 0; i < err.data.size(); ++i)
    if (valid.data[i]) {
      u.push_back(uncertainty.data[i]);
      e.push_back(err.data[i]);
    }
  detail::require(u.size() >= 3, "spearman_cc: needs at least 3 valid pixels");
  return detail::pearson(detail::fractional_ranks(u),
                         detail::fractional_ranks(e));
}

struct EvalReport {
  double epe = 0;
  double fl_all = 0;
  double fl_noc = 0;
  double fl_occ = 0;
  double ause = 0;
  std::optional<double> spearman_cc;
};

inline std::string eval_csv_header() {
  return "frame,epe,fl_all,fl_noc,fl_occ,ause,spearman_cc";
}

inline std::string eval_csv_row(const std::string& label,
                                const EvalReport& r) {
  std::ostringstream os;
  os << label << ',' << r.epe << ',' << r.fl_all << ',' << r.fl_noc << ','
     << r.fl_occ << ',' << r.ause << ',';
  if (r.spearman_cc)
    os << *r.spearman_cc;
  else
    os << "nan";
  return os.str();
}

// Plot-data file: one (fraction, oracle, predicted) triple per line.
inline std::string sparsification_plot_csv(const SparsificationResult& s) {
  std::ostringstream os;
  os << "fraction,oracle,predicted\n";
  for (size_t i = 0; i < s.fractions.size(); ++i)
    os << s.fractions[i] << ',' << s.err_by_oracle[i] << ','
       << s.err_by_uncertainty[i] << '\n';
  return os.str();
}

}  // namespace u2flow
