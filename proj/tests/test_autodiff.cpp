#include <gtest/gtest.h>

#include <cmath>

#include "op_checks.hpp"
#include "u2flow/grad_check.hpp"
#include "u2flow/ops.hpp"
#include "u2flow/tensor.hpp"

using namespace u2flow;

TEST(GraphTest, SumOfSquaresGradient) {
  Graph<double> g;
  auto x = g.parameter({3}, {1.0, 2.0, 3.0});
  auto y = sum_all(mul(x, x));
  EXPECT_DOUBLE_EQ(y.value(), 14.0);
  g.backward(y);
  auto gx = g.grad(x);
  ASSERT_EQ(gx.size(), 3u);
  EXPECT_EQ(gx[0], 2.0);
  EXPECT_EQ(gx[1], 4.0);
  EXPECT_EQ(gx[2], 6.0);
}

TEST(GraphTest, SigmoidDerivativeAtZero) {
  Graph<double> g;
  auto x = g.parameter({1}, {0.0});
  auto y = sum_all(sigmoid(x));
  EXPECT_DOUBLE_EQ(y.value(), 0.5);
  g.backward(y);
  EXPECT_DOUBLE_EQ(g.grad(x)[0], 0.25);
}

TEST(GraphTest, DetachStopsGradientExactly) {
  // y = sum(x * detach(x)): the detached factor is a constant, so
  // dy/dx == x values (not 2x), bit-exact.
  Graph<double> g;
  auto x = g.parameter({3}, {1.0, 2.0, 3.0});
  auto y = sum_all(mul(x, detach(x)));
  g.backward(y);
  auto gx = g.grad(x);
  EXPECT_EQ(gx[0], 1.0);
  EXPECT_EQ(gx[1], 2.0);
  EXPECT_EQ(gx[2], 3.0);
}

TEST(GraphTest, UnreachedNodesReportExactZeroGrad) {
  Graph<double> g;
  auto x = g.parameter({2}, {1.0, 2.0});
  auto z = g.parameter({2}, {5.0, 6.0});
  auto dead = mul(z, z);  // never feeds the root
  auto y = sum_all(mul(x, x));
  g.backward(y);
  EXPECT_FALSE(g.reached(z));
  EXPECT_FALSE(g.reached(dead));
  auto gz = g.grad(z);
  EXPECT_EQ(gz[0], 0.0);
  EXPECT_EQ(gz[1], 0.0);
}

TEST(GraphTest, DetachedBranchGetsExactZeroGrad) {
  // x feeds the loss both directly and through a detached path; the
  // detached path must contribute nothing.
  Graph<double> g;
  auto x = g.parameter({2}, {3.0, 4.0});
  auto d = detach(mul(x, x));
  auto y = sum_all(add(x, d));
  g.backward(y);
  auto gx = g.grad(x);
  EXPECT_EQ(gx[0], 1.0);
  EXPECT_EQ(gx[1], 1.0);
}

TEST(GraphTest, BackwardRequiresScalarRoot) {
  Graph<double> g;
  auto x = g.parameter({3}, {1.0, 2.0, 3.0});
  auto y = mul(x, x);
  EXPECT_THROW(g.backward(y), ContractError);
}

TEST(GraphTest, SecondBackwardResetsAccumulators) {
  Graph<double> g;
  auto x = g.parameter({2}, {2.0, 3.0});
  auto y = sum_all(mul(x, x));
  g.backward(y);
  g.backward(y);
  auto gx = g.grad(x);
  EXPECT_EQ(gx[0], 4.0);  // not doubled
  EXPECT_EQ(gx[1], 6.0);
}

TEST(GraphTest, FanOutAccumulates) {
  // y = sum(x*x + 3x): dy/dx = 2x + 3.
  Graph<double> g;
  auto x = g.parameter({2}, {1.5, -2.0});
  auto y = sum_all(add(mul(x, x), mul_scalar(x, 3.0)));
  g.backward(y);
  auto gx = g.grad(x);
  EXPECT_DOUBLE_EQ(gx[0], 6.0);
  EXPECT_DOUBLE_EQ(gx[1], -1.0);
}

TEST(GraphTest, ShapeMismatchThrows) {
  Graph<double> g;
  auto a = g.parameter({2, 3}, std::vector<double>(6, 1.0));
  auto b = g.parameter({3, 2}, std::vector<double>(6, 1.0));
  EXPECT_THROW(add(a, b), ContractError);
  EXPECT_THROW(matmul(a, a), ContractError);
  EXPECT_THROW(reshape(a, Shape{5}), ContractError);
  EXPECT_THROW(slice(a, {0, 0}, {3, 3}), ContractError);
}

TEST(GraphTest, DeterministicReplay) {
  // Same construction, same inputs: values and grads are bit-identical.
  auto run = [](std::vector<double>* vals, std::vector<double>* grads) {
    Graph<double> g;
    auto x = g.parameter({4, 5, 2},
                         random_values({4, 5, 2}, 99, -1.0, 1.0));
    auto f = g.parameter({4, 5, 2},
                         random_values({4, 5, 2}, 98, -0.8, 0.8));
    auto w = warp_bilinear(x, f);
    auto y = mean_all(mul(w, w));
    g.backward(y);
    *vals = {y.value()};
    *grads = g.grad(x);
    auto gf = g.grad(f);
    grads->insert(grads->end(), gf.begin(), gf.end());
  };
  std::vector<double> v1, g1, v2, g2;
  run(&v1, &g1);
  run(&v2, &g2);
  EXPECT_EQ(v1, v2);
  EXPECT_EQ(g1, g2);
}

TEST(OpGradChecks, AllOpsMatchFiniteDifferences) {
  for (const auto& check : u2flow_test::all_op_checks()) {
    for (uint64_t seed : {1, 2}) {
      auto res = check.run(seed);
      EXPECT_TRUE(res.ok) << check.name << " seed " << seed << ": "
                          << res.message();
    }
  }
}

TEST(OpValues, MatmulMatchesManual) {
  Graph<double> g;
  auto a = g.constant({2, 3}, {1, 2, 3, 4, 5, 6});
  auto b = g.constant({3, 2}, {7, 8, 9, 10, 11, 12});
  auto y = matmul(a, b);
  ASSERT_EQ(y.shape(), (Shape{2, 2}));
  EXPECT_DOUBLE_EQ(y.values()[0], 58.0);
  EXPECT_DOUBLE_EQ(y.values()[1], 64.0);
  EXPECT_DOUBLE_EQ(y.values()[2], 139.0);
  EXPECT_DOUBLE_EQ(y.values()[3], 154.0);
}

TEST(OpValues, Conv2dIdentityKernel) {
  // 1x1 kernel with unit weight reproduces the input channel.
  Graph<double> g;
  auto x = g.constant({2, 2, 1}, {1, 2, 3, 4});
  auto w = g.constant({1, 1, 1, 1}, {1.0});
  auto b = g.constant({1}, {0.5});
  auto y = conv2d(x, w, b, 1, 0);
  EXPECT_EQ(y.shape(), (Shape{2, 2, 1}));
  EXPECT_DOUBLE_EQ(y.values()[0], 1.5);
  EXPECT_DOUBLE_EQ(y.values()[3], 4.5);
}

TEST(OpValues, Conv2dStrideAndPadShapes) {
  Graph<double> g;
  auto x = g.zeros({64, 64, 3});
  auto w = g.zeros({8, 3, 3, 3});
  auto b = g.zeros({8});
  auto y = conv2d(x, w, b, 2, 1);
  EXPECT_EQ(y.shape(), (Shape{32, 32, 8}));
}

TEST(OpValues, WarpBilinearIntegerShift) {
  // Uniform flow (1, 0) samples the right neighbor exactly.
  Graph<double> g;
  auto src = g.constant({1, 3, 1}, {10.0, 20.0, 30.0});
  std::vector<double> fv = {1, 0, 1, 0, 1, 0};
  auto flow = g.constant({1, 3, 2}, fv);
  auto y = warp_bilinear(src, flow);
  EXPECT_DOUBLE_EQ(y.values()[0], 20.0);
  EXPECT_DOUBLE_EQ(y.values()[1], 30.0);
  EXPECT_DOUBLE_EQ(y.values()[2], 30.0);  // border clamp
}

TEST(OpValues, UpsampleConstantIsConstant) {
  Graph<double> g;
  auto x = g.full({3, 3, 2}, 2.5);
  auto y = upsample_bilinear(x, 4);
  EXPECT_EQ(y.shape(), (Shape{12, 12, 2}));
  for (double v : y.values()) EXPECT_DOUBLE_EQ(v, 2.5);
}

TEST(OpValues, AvgPoolMeans) {
  Graph<double> g;
  auto x = g.constant({1, 2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
  auto y = avg_pool2x2(x);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 2}));
  EXPECT_DOUBLE_EQ(y.values()[0], 3.5);
  EXPECT_DOUBLE_EQ(y.values()[1], 5.5);
}

TEST(OpValues, CorrLookupZeroFlowCenterTap) {
  // radius 0, scale 1: output at p is level(p, y, x) sampled at p itself.
  const int H = 2, W = 2;
  Graph<double> g;
  std::vector<double> lv(static_cast<size_t>(H * W * H * W));
  for (int p = 0; p < H * W; ++p)
    for (int q = 0; q < H * W; ++q)
      lv[static_cast<size_t>(p * H * W + q)] = 10.0 * p + q;
  auto level = g.constant({H * W, H, W}, lv);
  auto flow = g.zeros({H, W, 2});
  auto y = corr_lookup(level, flow, 0, 1.0);
  EXPECT_EQ(y.shape(), (Shape{H, W, 1}));
  for (int p = 0; p < H * W; ++p)
    EXPECT_DOUBLE_EQ(y.values()[static_cast<size_t>(p)], 10.0 * p + p);
}

TEST(OpValues, BroadcastAndReduceRoundTrip) {
  Graph<double> g;
  auto x = g.constant({2, 1}, {3.0, 4.0});
  auto y = broadcast_to(x, Shape{2, 3});
  EXPECT_EQ(y.values(), (std::vector<double>{3, 3, 3, 4, 4, 4}));
  auto s = reduce_sum(y, {1}, true);
  EXPECT_EQ(s.shape(), (Shape{2, 1}));
  EXPECT_DOUBLE_EQ(s.values()[0], 9.0);
  EXPECT_DOUBLE_EQ(s.values()[1], 12.0);
}

TEST(OpValues, ConcatSliceInverse) {
  Graph<double> g;
  auto a = g.constant({2, 2}, {1, 2, 3, 4});
  auto b = g.constant({2, 3}, {5, 6, 7, 8, 9, 10});
  auto y = concat<double>({a, b}, 1);
  EXPECT_EQ(y.shape(), (Shape{2, 5}));
  EXPECT_EQ(y.values(), (std::vector<double>{1, 2, 5, 6, 7, 3, 4, 8, 9, 10}));
  auto back = slice(y, {0, 2}, {2, 3});
  EXPECT_EQ(back.values(), b.values());
}

TEST(OpValues, FloatAndDoubleGraphsAgree) {
  // The whole library is templated; a float graph must track the double
  // graph to float precision.
  auto build = [](auto& g, auto x) {
    auto h = sigmoid(mul_scalar(x, decltype(x.value())(0.5)));
    return mean_all(mul(h, h));
  };
  Graph<double> gd;
  auto vals = random_values({4, 4, 2}, 7, -2.0, 2.0);
  auto xd = gd.parameter({4, 4, 2}, vals);
  double yd = build(gd, xd).value();
  Graph<float> gf;
  std::vector<float> fvals(vals.begin(), vals.end());
  auto xf = gf.parameter({4, 4, 2}, fvals);
  float yf = build(gf, xf).value();
  EXPECT_NEAR(yd, static_cast<double>(yf), 1e-6);
}
