#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "u2flow/image.hpp"
#include "u2flow/ops.hpp"
#include "u2flow/synth.hpp"

using namespace u2flow;

namespace {

SynthConfig small_cfg() {
  SynthConfig cfg;
  cfg.size = 48;
  cfg.motion_min = 2.0;
  cfg.motion_max = 5.0;
  return cfg;
}

}  // namespace

TEST(Synth, DeterministicAcrossCalls) {
  const auto a = generate_sample(42, small_cfg());
  const auto b = generate_sample(42, small_cfg());
  EXPECT_EQ(a.img_cur.data, b.img_cur.data);
  EXPECT_EQ(a.img_next.data, b.img_next.data);
  EXPECT_EQ(a.flow_fwd.data, b.flow_fwd.data);
  EXPECT_EQ(a.occ_fwd.data, b.occ_fwd.data);
  const auto c = generate_sample(43, small_cfg());
  EXPECT_NE(a.img_cur.data, c.img_cur.data);
}

TEST(Synth, BackgroundOnlyFlowIsGloballyAffine) {
  // Reconstruct the affine from three pixels, then every pixel must agree.
  SynthConfig cfg = small_cfg();
  cfg.min_objects = cfg.max_objects = 0;
  const auto s = generate_sample(7, cfg);
  const double u0 = s.flow_fwd.u(0, 0), v0 = s.flow_fwd.v(0, 0);
  const double ux = s.flow_fwd.u(0, 1) - u0, vx = s.flow_fwd.v(0, 1) - v0;
  const double uy = s.flow_fwd.u(1, 0) - u0, vy = s.flow_fwd.v(1, 0) - v0;
  for (int y = 0; y < cfg.size; ++y)
    for (int x = 0; x < cfg.size; ++x) {
      EXPECT_NEAR(s.flow_fwd.u(y, x), u0 + ux * x + uy * y, 1e-4);
      EXPECT_NEAR(s.flow_fwd.v(y, x), v0 + vx * x + vy * y, 1e-4);
    }
  // Occlusion can only come from leaving the canvas.
  for (int y = 0; y < cfg.size; ++y)
    for (int x = 0; x < cfg.size; ++x) {
      const double qx = x + s.flow_fwd.u(y, x);
      const double qy = y + s.flow_fwd.v(y, x);
      const bool outside =
          qx < 0 || qx > cfg.size - 1 || qy < 0 || qy > cfg.size - 1;
      EXPECT_EQ(s.occ_fwd.at(y, x) != 0, outside);
    }
}

TEST(Synth, LinearTripleFlowsNegateExactly) {
  const auto s = generate_linear_triple(11, small_cfg());
  ASSERT_EQ(s.flow_prev.data.size(), s.flow_fwd.data.size());
  for (size_t i = 0; i < s.flow_fwd.data.size(); ++i)
    EXPECT_EQ(s.flow_prev.data[i], -s.flow_fwd.data[i]) << "at " << i;
}

TEST(Synth, WarpingNextByFlowRecoversCur) {
  const auto s = generate_sample(5, small_cfg());
  Graph<float> g;
  auto warped = warp_bilinear(tensor_from_image(g, s.img_next),
                              tensor_from_flow(g, s.flow_fwd));
  double sum = 0;
  int64_t count = 0;
  for (int y = 0; y < s.img_cur.height; ++y)
    for (int x = 0; x < s.img_cur.width; ++x) {
      if (s.occ_fwd.at(y, x)) continue;
      for (int c = 0; c < 3; ++c) {
        const float w =
            warped.values()[(static_cast<size_t>(y) * s.img_cur.width + x) * 3 +
                            static_cast<size_t>(c)];
        sum += std::abs(w - s.img_cur.at(y, x, c));
        ++count;
      }
    }
  ASSERT_GT(count, 0);
  EXPECT_LT(sum / static_cast<double>(count), 0.02);
}

TEST(Synth, RegionsDisjointAndCover) {
  const auto s = generate_sample(9, small_cfg());
  ASSERT_GE(s.regions.size(), 3u);  // background + >=2 objects
  for (int y = 0; y < 48; ++y)
    for (int x = 0; x < 48; ++x) {
      int covered = 0;
      for (const auto& r : s.regions) covered += r.at(y, x) != 0;
      EXPECT_EQ(covered, 1) << "pixel " << y << "," << x;
    }
  // Objects actually occlude something in a moving scene.
  EXPECT_GT(s.occ_fwd.count(), 0);
  EXPECT_LT(s.occ_fwd.count(), s.occ_fwd.data.size() * 2 / 5);
}

TEST(Synth, MotionBoundsContract) {
  SynthConfig cfg = small_cfg();
  cfg.motion_max = cfg.size;  // exceeds what the canvas can support
  EXPECT_THROW(generate_sample(1, cfg), ContractError);
}

TEST(Synth, CorruptionTouchesOnlyNextFrame) {
  SynthConfig clean = small_cfg();
  SynthConfig corrupt = clean;
  corrupt.corrupt_next = true;
  const auto a = generate_sample(21, clean);
  const auto b = generate_sample(21, corrupt);
  EXPECT_EQ(a.img_prev.data, b.img_prev.data);
  EXPECT_EQ(a.img_cur.data, b.img_cur.data);
  EXPECT_NE(a.img_next.data, b.img_next.data);
  EXPECT_EQ(a.flow_fwd.data, b.flow_fwd.data);
  EXPECT_EQ(a.occ_fwd.data, b.occ_fwd.data);
}

TEST(Synth, ExportImportRoundTrip) {
  namespace fs = std::filesystem;
  const auto s = generate_sample(33, small_cfg());
  const std::string dir =
      (fs::temp_directory_path() / "u2flow_synth_rt").string();
  export_sample(dir, s);
  const auto r = import_sample(dir);
  EXPECT_EQ(r.flow_fwd.data, s.flow_fwd.data);
  EXPECT_EQ(r.flow_bwd.data, s.flow_bwd.data);
  EXPECT_EQ(r.flow_prev.data, s.flow_prev.data);
  EXPECT_EQ(r.occ_fwd.data, s.occ_fwd.data);
  EXPECT_EQ(r.regions.size(), s.regions.size());
  for (size_t i = 0; i < s.regions.size(); ++i)
    EXPECT_EQ(r.regions[i].data, s.regions[i].data);
  ASSERT_EQ(r.img_cur.data.size(), s.img_cur.data.size());
  for (size_t i = 0; i < s.img_cur.data.size(); ++i)
    EXPECT_NEAR(r.img_cur.data[i], s.img_cur.data[i], 1.f / 255.f + 1e-6f);
}
