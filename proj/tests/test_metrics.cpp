#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "u2flow/metrics.hpp"

using namespace u2flow;

namespace {

MaskImage ones_mask(int w, int h) {
  MaskImage m(w, h);
  for (auto& v : m.data) v = 1;
  return m;
}

ScalarMap map_of(int w, int h, const std::vector<float>& v) {
  ScalarMap m(w, h);
  m.data = v;
  return m;
}

// Independent reference sparsifier: explicit sort of (key, index) pairs,
// direct mean over the kept pixels, same 0.02 grid convention.
std::vector<double> reference_curve(const std::vector<double>& err,
                                    const std::vector<double>& key) {
  const int n = static_cast<int>(err.size());
  std::vector<std::pair<double, int>> items;
  for (int i = 0; i < n; ++i) items.push_back({key[i], i});
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<double> curve;
  for (int i = 0; i <= 50; ++i) {
    const int k = i * n / 50;
    if (k >= n) {
      curve.push_back(0.0);
      continue;
    }
    double s = 0;
    for (int j = k; j < n; ++j) s += err[items[j].second];
    curve.push_back(s / (n - k));
  }
  return curve;
}

}  // namespace

TEST(Epe, ExactOnSimplePatterns) {
  const int W = 4, H = 3;
  FlowField pred(W, H), gt(W, H);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      gt.u(y, x) = 0.5f * x;
      gt.v(y, x) = -0.25f * y;
      pred.u(y, x) = gt.u(y, x);
      pred.v(y, x) = gt.v(y, x);
    }
  EXPECT_EQ(epe(pred, gt, ones_mask(W, H)), 0.0);

  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      pred.u(y, x) = gt.u(y, x) + 3.f;
      pred.v(y, x) = gt.v(y, x) + 4.f;
    }
  EXPECT_EQ(epe(pred, gt, ones_mask(W, H)), 5.0);
}

TEST(Epe, MeanOverHalfZeroHalfTwo) {
  const int W = 4, H = 2;
  FlowField pred(W, H), gt(W, H);
  for (int x = 0; x < W; ++x) pred.u(1, x) = 2.f;
  EXPECT_EQ(epe(pred, gt, ones_mask(W, H)), 1.0);
}

TEST(Epe, MaskRestrictsThePixelSet) {
  const int W = 3, H = 1;
  FlowField pred(W, H), gt(W, H);
  pred.u(0, 0) = 6.f;
  pred.u(0, 1) = 2.f;
  MaskImage m(W, H);
  m.at(0, 1) = 1;
  m.at(0, 2) = 1;
  EXPECT_EQ(epe(pred, gt, m), 1.0);
  MaskImage empty(W, H);
  EXPECT_THROW(epe(pred, gt, empty), DegenerateMaskError);
}

TEST(FlRate, ThreePixelAndFivePercentRule) {
  const int W = 3, H = 1;
  FlowField pred(W, H), gt(W, H);
  // Pixel 0: error 4, magnitude 10 -> outlier (4 > 3 and 40% > 5%).
  gt.u(0, 0) = 10.f;
  pred.u(0, 0) = 14.f;
  // Pixel 1: error 4, magnitude 200 -> not an outlier (2% <= 5%).
  gt.u(0, 1) = 200.f;
  pred.u(0, 1) = 204.f;
  // Pixel 2: zero error.
  gt.u(0, 2) = 5.f;
  pred.u(0, 2) = 5.f;
  EXPECT_NEAR(fl_rate(pred, gt, ones_mask(W, H)), 100.0 / 3.0, 1e-12);

  MaskImage region(W, H);
  region.at(0, 1) = 1;
  EXPECT_EQ(fl_rate(pred, gt, ones_mask(W, H), &region), 0.0);
  region.at(0, 1) = 0;
  EXPECT_THROW(fl_rate(pred, gt, ones_mask(W, H), &region),
               DegenerateMaskError);
}

TEST(FlRate, ZeroErrorGivesZeroPercent) {
  FlowField pred(5, 5), gt(5, 5);
  for (size_t i = 0; i < gt.data.size(); ++i) pred.data[i] = gt.data[i] = 1.f;
  EXPECT_EQ(fl_rate(pred, gt, ones_mask(5, 5)), 0.0);
}

TEST(Sparsification, MatchesBruteForceOnAllPermutationsOfSixPixels) {
  // Dyadic error values keep every partial sum exact, so the library and
  // the reference sparsifier must agree bit for bit.
  const std::vector<float> err_f = {0.25f, 0.5f, 1.f, 2.f, 3.f, 4.25f};
  const std::vector<double> err_d(err_f.begin(), err_f.end());
  std::vector<float> key = {1.f, 2.f, 3.f, 4.f, 5.f, 6.f};
  std::sort(key.begin(), key.end());
  const MaskImage valid = ones_mask(6, 1);
  const ScalarMap err = map_of(6, 1, err_f);
  int checked = 0;
  do {
    const auto r = sparsification(err, map_of(6, 1, key), valid);
    const std::vector<double> key_d(key.begin(), key.end());
    const auto ref_unc = reference_curve(err_d, key_d);
    const auto ref_orc = reference_curve(err_d, err_d);
    const double full = ref_orc[0];
    ASSERT_EQ(r.err_by_uncertainty.size(), ref_unc.size());
    for (size_t i = 0; i < ref_unc.size(); ++i) {
      EXPECT_EQ(r.err_by_uncertainty[i], ref_unc[i] / full);
      EXPECT_EQ(r.err_by_oracle[i], ref_orc[i] / full);
    }
    ++checked;
  } while (std::next_permutation(key.begin(), key.end()));
  EXPECT_EQ(checked, 720);
}

TEST(Sparsification, OracleSelfMatchAndMonotonicity) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<float> d(0.f, 8.f);
  std::vector<float> e(64);
  for (auto& v : e) v = d(rng);
  const auto r =
      sparsification(map_of(8, 8, e), map_of(8, 8, e), ones_mask(8, 8));
  for (size_t i = 0; i < r.fractions.size(); ++i)
    EXPECT_EQ(r.err_by_uncertainty[i], r.err_by_oracle[i]);
  for (size_t i = 1; i < r.fractions.size(); ++i)
    EXPECT_LE(r.err_by_oracle[i], r.err_by_oracle[i - 1] + 1e-15);
  EXPECT_EQ(r.err_by_oracle[0], 1.0);
  EXPECT_EQ(ause(r), 0.0);
}

TEST(Sparsification, AntiCorrelatedKeyMaximizesTheGap) {
  const std::vector<float> err_f = {0.25f, 0.5f, 1.f, 2.f, 3.f, 4.25f};
  const ScalarMap err = map_of(6, 1, err_f);
  const MaskImage valid = ones_mask(6, 1);
  std::vector<float> anti(6);
  for (int i = 0; i < 6; ++i) anti[static_cast<size_t>(i)] = -err_f[static_cast<size_t>(i)];
  const auto worst = sparsification(err, map_of(6, 1, anti), valid);
  for (size_t i = 0; i < worst.fractions.size(); ++i)
    EXPECT_GE(worst.err_by_uncertainty[i], worst.err_by_oracle[i]);
  const double worst_area = ause(worst);

  std::vector<float> key = {1.f, 2.f, 3.f, 4.f, 5.f, 6.f};
  std::sort(key.begin(), key.end());
  do {
    const auto r = sparsification(err, map_of(6, 1, key), valid);
    EXPECT_LE(ause(r), worst_area + 1e-15);
  } while (std::next_permutation(key.begin(), key.end()));
}

TEST(Sparsification, ConstantErrorGivesFlatCurves) {
  std::vector<float> e(60, 1.5f);
  std::vector<float> u(60);
  std::iota(u.begin(), u.end(), 0.f);
  const auto r =
      sparsification(map_of(60, 1, e), map_of(60, 1, u), ones_mask(60, 1));
  for (size_t i = 0; i + 1 < r.fractions.size(); ++i) {
    EXPECT_EQ(r.err_by_uncertainty[i], 1.0);
    EXPECT_EQ(r.err_by_oracle[i], 1.0);
  }
  EXPECT_EQ(r.err_by_uncertainty.back(), 0.0);
  EXPECT_EQ(r.err_by_oracle.back(), 0.0);
}

TEST(Sparsification, ZeroErrorEverywhereIsFlagged) {
  std::vector<float> e(50, 0.f), u(50, 1.f);
  const auto r =
      sparsification(map_of(50, 1, e), map_of(50, 1, u), ones_mask(50, 1));
  EXPECT_TRUE(r.degenerate);
  for (double v : r.err_by_uncertainty) EXPECT_EQ(v, 0.0);
  for (double v : r.err_by_oracle) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(ause(r), 0.0);
}

TEST(Sparsification, TiesRemoveLowerPixelIndexFirst) {
  // All keys equal: removal must proceed in pixel-index order, so after
  // one removal the mean loses pixel 0.
  const std::vector<float> e = {4.f, 1.f, 1.f, 1.f, 1.f, 1.f};
  const std::vector<float> u(6, 7.f);
  const auto r =
      sparsification(map_of(6, 1, e), map_of(6, 1, u), ones_mask(6, 1));
  const double full = 9.0 / 6.0;
  // Grid index 9 (fraction 0.18) removes floor(9*6/50) = 1 pixel.
  EXPECT_EQ(r.err_by_uncertainty[9], (5.0 / 5.0) / full);
}

TEST(Ause, FourPixelToyCaseMatchesHandIntegration) {
  // err = [4,3,2,1], uncertainty fully anti-correlated. Normalized curves:
  // oracle [1,.8,.6,.4,0], predicted [1,1.2,1.4,1.6,0] across removal
  // counts 0..4; grid-mapped trapezoid area = 0.592.
  const std::vector<float> e = {4.f, 3.f, 2.f, 1.f};
  const std::vector<float> u = {1.f, 2.f, 3.f, 4.f};
  const auto r =
      sparsification(map_of(4, 1, e), map_of(4, 1, u), ones_mask(4, 1));
  EXPECT_NEAR(ause(r), 0.592, 1e-9);
}

TEST(Ause, NonNegativeOnRandomInputs) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<float> d(0.f, 5.f);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<float> e(81), u(81);
    for (auto& v : e) v = d(rng);
    for (auto& v : u) v = d(rng);
    const auto r =
        sparsification(map_of(9, 9, e), map_of(9, 9, u), ones_mask(9, 9));
    EXPECT_GE(ause(r), 0.0);
  }
}

TEST(SpearmanCc, MonotoneTransformsGiveExactlyOne) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> d(0.1f, 4.f);
  std::vector<float> e(25);
  for (auto& v : e) v = d(rng);
  std::vector<float> u(25);
  for (size_t i = 0; i < e.size(); ++i) u[i] = std::exp(e[i]);
  const auto cc =
      spearman_cc(map_of(5, 5, u), map_of(5, 5, e), ones_mask(5, 5));
  ASSERT_TRUE(cc.has_value());
  EXPECT_NEAR(*cc, 1.0, 1e-12);

  for (size_t i = 0; i < e.size(); ++i) u[i] = -e[i];
  const auto anti =
      spearman_cc(map_of(5, 5, u), map_of(5, 5, e), ones_mask(5, 5));
  ASSERT_TRUE(anti.has_value());
  EXPECT_NEAR(*anti, -1.0, 1e-12);
}

TEST(SpearmanCc, InvariantUnderMonotoneTransformsOfEitherSide) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<float> d(0.25f, 3.f);
  std::vector<float> e(16), u(16);
  for (auto& v : e) v = d(rng);
  for (auto& v : u) v = d(rng);
  const auto base =
      spearman_cc(map_of(4, 4, u), map_of(4, 4, e), ones_mask(4, 4));
  std::vector<float> u2(16), e2(16);
  for (size_t i = 0; i < 16; ++i) {
    u2[i] = 3.f * u[i] + 7.f;
    e2[i] = e[i] * e[i] * e[i];
  }
  const auto xf =
      spearman_cc(map_of(4, 4, u2), map_of(4, 4, e2), ones_mask(4, 4));
  ASSERT_TRUE(base.has_value() && xf.has_value());
  EXPECT_EQ(*base, *xf);
}

TEST(SpearmanCc, SingleSwapGivesPointEight) {
  const std::vector<float> e = {1.f, 2.f, 3.f, 4.f};
  const std::vector<float> u = {1.f, 2.f, 4.f, 3.f};
  const auto cc =
      spearman_cc(map_of(4, 1, u), map_of(4, 1, e), ones_mask(4, 1));
  ASSERT_TRUE(cc.has_value());
  EXPECT_NEAR(*cc, 0.8, 1e-12);
}

TEST(SpearmanCc, MatchesRankDifferenceFormulaWithoutTies) {
  // 1 - 6*sum(d^2)/(n(n^2-1)) is valid when all values are distinct.
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<float> e(10), u(10);
    std::iota(e.begin(), e.end(), 1.f);
    std::iota(u.begin(), u.end(), 1.f);
    std::shuffle(e.begin(), e.end(), rng);
    std::shuffle(u.begin(), u.end(), rng);
    const auto cc =
        spearman_cc(map_of(10, 1, u), map_of(10, 1, e), ones_mask(10, 1));
    ASSERT_TRUE(cc.has_value());
    double sum_d2 = 0;
    for (size_t i = 0; i < 10; ++i) {
      const double d = e[i] - u[i];  // values are their own ranks here
      sum_d2 += d * d;
    }
    const double expected = 1.0 - 6.0 * sum_d2 / (10.0 * 99.0);
    EXPECT_NEAR(*cc, expected, 1e-12);
  }
}

TEST(SpearmanCc, AverageRanksForTies) {
  const std::vector<float> u = {1.f, 1.f, 2.f};
  const std::vector<float> e = {3.f, 5.f, 9.f};
  const auto cc =
      spearman_cc(map_of(3, 1, u), map_of(3, 1, e), ones_mask(3, 1));
  ASSERT_TRUE(cc.has_value());
  EXPECT_NEAR(*cc, std::sqrt(3.0) / 2.0, 1e-12);
}

TEST(SpearmanCc, ConstantSideIsAbsentAndSmallInputsRejected) {
  const std::vector<float> u = {2.f, 2.f, 2.f, 2.f};
  const std::vector<float> e = {1.f, 2.f, 3.f, 4.f};
  EXPECT_FALSE(
      spearman_cc(map_of(4, 1, u), map_of(4, 1, e), ones_mask(4, 1))
          .has_value());
  EXPECT_THROW(
      spearman_cc(map_of(2, 1, {1.f, 2.f}), map_of(2, 1, {1.f, 2.f}),
                  ones_mask(2, 1)),
      ContractError);
}

TEST(EvalReportCsv, HeaderAndRowShape) {
  EvalReport r;
  r.epe = 1.25;
  r.fl_all = 10;
  r.spearman_cc = 0.5;
  EXPECT_EQ(eval_csv_header(), "frame,epe,fl_all,fl_noc,fl_occ,ause,spearman_cc");
  EXPECT_EQ(eval_csv_row("frame_0", r), "frame_0,1.25,10,0,0,0,0.5");
  r.spearman_cc.reset();
  EXPECT_EQ(eval_csv_row("agg", r), "agg,1.25,10,0,0,0,nan");
}
