#include <gtest/gtest.h>

#include "sparsefcn/errors.hpp"
#include "sparsefcn/regions.hpp"
#include "test_util.hpp"

using namespace sparsefcn;
using testutil::random_tensor;

TEST(RegionGrid, ToyGeometry) {
  const RegionGrid g = RegionGrid::for_image(64, 128, 16, 16);
  EXPECT_EQ(g.rows, 4);
  EXPECT_EQ(g.cols, 8);
  EXPECT_EQ(g.tau, 1);
  EXPECT_EQ(g.image_h(), 64);
  EXPECT_EQ(g.image_w(), 128);
  EXPECT_EQ(region_footprint(g, 4), 4);
  EXPECT_THROW(region_footprint(g, 32), ParameterError);
}

TEST(CropGrid, FourCropsRowMajor) {
  Tensor x({1, 1, 4, 4});
  for (int i = 0; i < 16; ++i) x.data()[i] = i;
  const RegionGrid g = RegionGrid::for_image(4, 4, 2, 1);
  const Tensor c = crop_grid(x, g, 1);
  ASSERT_EQ(c.dims(), (Dims{4, 1, 2, 2}));
  const double expected[4][4] = {{0, 1, 4, 5}, {2, 3, 6, 7}, {8, 9, 12, 13}, {10, 11, 14, 15}};
  for (int n = 0; n < 4; ++n)
    for (int i = 0; i < 4; ++i) EXPECT_EQ(c.data()[n * 4 + i], expected[n][i]);
}

TEST(CropGrid, RoundTripIsBitExact) {
  const RegionGrid g = RegionGrid::for_image(64, 128, 16, 16);
  const Tensor x = random_tensor({2, 3, 64, 128}, 1);
  const Tensor c = crop_grid(x, g, 1);
  EXPECT_EQ(c.dims(), (Dims{64, 3, 16, 16}));
  EXPECT_EQ(uncrop_grid(c, g, 1, 2), x);
  const Tensor f = random_tensor({2, 5, 16, 32}, 2);
  EXPECT_EQ(uncrop_grid(crop_grid(f, g, 4), g, 4, 2), f);
}

TEST(CropGrid, ToyImageGivesThirtyTwoCrops) {
  const RegionGrid g = RegionGrid::for_image(64, 128, 16, 16);
  EXPECT_EQ(crop_grid(Tensor({1, 3, 64, 128}), g, 1).dims(), (Dims{32, 3, 16, 16}));
  EXPECT_THROW(crop_grid(Tensor({1, 3, 60, 128}), g, 1), ParameterError);
}

TEST(UncropGrid, SkippedCropsAreZero) {
  const RegionGrid g = RegionGrid::for_image(32, 64, 16, 16);
  const Tensor x = random_tensor({1, 2, 32, 64}, 3);
  const std::vector<RegionIndex> active{{0, 0, 1}, {0, 1, 3}};
  const Tensor c = crop_grid(x, g, 1, active);
  EXPECT_EQ(c.dims().n, 2);
  const Tensor u = uncrop_grid(c, g, 1, 1, active);
  for (int ch = 0; ch < 2; ++ch)
    for (int y = 0; y < 32; ++y)
      for (int xx = 0; xx < 64; ++xx) {
        const RegionIndex r{0, y / 16, xx / 16};
        const bool on = r == active[0] || r == active[1];
        EXPECT_EQ(u.at(0, ch, y, xx), on ? x.at(0, ch, y, xx) : 0.0);
      }
  EXPECT_THROW(uncrop_grid(c, g, 1, 1), ParameterError);  // 2 crops for 8 regions
}

TEST(UncropGrid, PerCropConvolutionShowsBoundaryEffect) {
  const RegionGrid g = RegionGrid::for_image(32, 64, 16, 16);
  const Tensor x = random_tensor({1, 2, 32, 64}, 4);
  const ConvSpec s{2, 3, 3, 3, 1, 1, 1, 1};
  const ConvParams p{s, random_tensor(s.weight_dims(), 5), random_tensor(s.bias_dims(), 6)};
  const Tensor whole = conv2d(x, p);
  const Tensor tiled = uncrop_grid(conv2d(crop_grid(x, g, 1), p), g, 1, 1);
  double border = 0;
  double interior = 0;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 32; ++y)
      for (int xx = 0; xx < 64; ++xx) {
        const double d = std::abs(whole.at(0, c, y, xx) - tiled.at(0, c, y, xx));
        const bool on_border = y % 16 == 0 || y % 16 == 15 || xx % 16 == 0 || xx % 16 == 15;
        (on_border ? border : interior) = std::max(on_border ? border : interior, d);
      }
  EXPECT_GT(border, 0.0);
  EXPECT_LE(interior, 1e-12);
}
