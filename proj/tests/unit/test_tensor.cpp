#include <gtest/gtest.h>

#include <cmath>

#include "sparsefcn/errors.hpp"
#include "sparsefcn/tensor.hpp"
#include "test_util.hpp"

using namespace sparsefcn;
using testutil::fd_check;
using testutil::random_tensor;

namespace {

// Direct evaluation of the grouped, dilated cross-correlation definition.
Tensor conv_oracle(const Tensor& x, const ConvParams& p) {
  const ConvSpec& s = p.spec;
  const Dims id = x.dims();
  const int oh = (id.h + 2 * s.padding - (s.dilation * (s.kernel_h - 1) + 1)) / s.stride + 1;
  const int ow = (id.w + 2 * s.padding - (s.dilation * (s.kernel_w - 1) + 1)) / s.stride + 1;
  Tensor out({id.n, s.out_channels, oh, ow});
  const int ipg = s.in_channels / s.groups;
  const int opg = s.out_channels / s.groups;
  for (int n = 0; n < id.n; ++n)
    for (int oc = 0; oc < s.out_channels; ++oc)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double acc = p.bias.at(0, oc, 0, 0);
          for (int i = 0; i < ipg; ++i)
            for (int ky = 0; ky < s.kernel_h; ++ky)
              for (int kx = 0; kx < s.kernel_w; ++kx) {
                const int iy = oy * s.stride - s.padding + ky * s.dilation;
                const int ix = ox * s.stride - s.padding + kx * s.dilation;
                if (iy < 0 || ix < 0 || iy >= id.h || ix >= id.w) continue;
                acc += p.weight.at(oc, i, ky, kx) * x.at(n, (oc / opg) * ipg + i, iy, ix);
              }
          out.at(n, oc, oy, ox) = acc;
        }
  return out;
}

ConvParams random_params(const ConvSpec& s, std::uint64_t seed) {
  return {s, random_tensor(s.weight_dims(), seed), random_tensor(s.bias_dims(), seed + 7)};
}

}  // namespace

TEST(Conv2d, BoxSumOfOnes) {
  const ConvSpec s{1, 1, 3, 3, 1, 1, 1, 1};
  ConvParams p = ConvParams::zeros(s);
  p.weight.fill(1.0);
  const Tensor out = conv2d(Tensor({1, 1, 3, 3}, 1.0), p);
  EXPECT_EQ(out.at(0, 0, 1, 1), 9.0);
  EXPECT_EQ(out.at(0, 0, 0, 0), 4.0);
  EXPECT_EQ(out.at(0, 0, 2, 2), 4.0);
  EXPECT_EQ(out.at(0, 0, 0, 1), 6.0);
}

TEST(Conv2d, OneByOneIdentity) {
  ConvParams p = ConvParams::zeros({1, 1, 1, 1, 1, 1, 1, 0});
  p.weight.fill(1.0);
  const Tensor x = random_tensor({2, 1, 5, 4}, 1);
  EXPECT_EQ(conv2d(x, p), x);
}

TEST(Conv2d, MatchesDefinitionOracle) {
  const ConvSpec specs[] = {
      {3, 4, 3, 3, 1, 1, 1, 1}, {4, 6, 3, 3, 2, 1, 2, 1}, {4, 4, 3, 3, 1, 2, 4, 2},
      {2, 3, 1, 1, 1, 1, 1, 0}, {6, 4, 3, 3, 2, 2, 2, 2}, {8, 8, 2, 2, 2, 1, 8, 0},
  };
  std::uint64_t seed = 10;
  for (const ConvSpec& s : specs) {
    const Tensor x = random_tensor({2, s.in_channels, 8, 8}, seed++);
    const ConvParams p = random_params(s, seed++);
    EXPECT_LE(max_abs_diff(conv2d(x, p), conv_oracle(x, p)), 1e-12);
  }
}

TEST(Conv2d, GroupsEqualIndependentConvolutions) {
  const ConvSpec grouped{2, 2, 3, 3, 1, 1, 2, 1};
  const ConvParams p = random_params(grouped, 3);
  const Tensor x = random_tensor({1, 2, 4, 4}, 4);
  const Tensor out = conv2d(x, p);
  for (int g = 0; g < 2; ++g) {
    ConvParams single = ConvParams::zeros({1, 1, 3, 3, 1, 1, 1, 1});
    for (int k = 0; k < 9; ++k) single.weight.data()[k] = p.weight.data()[g * 9 + k];
    single.bias.data()[0] = p.bias.data()[g];
    Tensor xg({1, 1, 4, 4});
    for (int i = 0; i < 16; ++i) xg.data()[i] = x.data()[g * 16 + i];
    const Tensor og = conv2d(xg, single);
    for (int i = 0; i < 16; ++i) EXPECT_DOUBLE_EQ(out.data()[g * 16 + i], og.data()[i]);
  }
}

TEST(Conv2d, DenseWithBlockDiagonalKernelsEqualsGrouped) {
  for (int groups : {2, 4, 8}) {
    const ConvSpec gs{8, 8, 3, 3, 1, 1, groups, 1};
    const ConvParams gp = random_params(gs, 20 + groups);
    ConvParams dense = ConvParams::zeros({8, 8, 3, 3, 1, 1, 1, 1});
    dense.bias = gp.bias;
    const int per = 8 / groups;
    for (int oc = 0; oc < 8; ++oc)
      for (int i = 0; i < per; ++i)
        for (int k = 0; k < 9; ++k)
          dense.weight.at(oc, (oc / per) * per + i, k / 3, k % 3) = gp.weight.at(oc, i, k / 3, k % 3);
    const Tensor x = random_tensor({1, 8, 8, 8}, 30 + groups);
    EXPECT_LE(max_abs_diff(conv2d(x, gp), conv2d(x, dense)), 1e-12) << "groups " << groups;
  }
}

TEST(Conv2d, BatchIndependentBitExact) {
  const ConvParams p = random_params({3, 5, 3, 3, 2, 1, 1, 1}, 5);
  const Tensor batch = random_tensor({3, 3, 8, 8}, 6);
  const Tensor all = conv2d(batch, p);
  for (int n = 0; n < 3; ++n) {
    Tensor one({1, 3, 8, 8});
    std::copy_n(batch.data().begin() + n * 192, 192, one.data().begin());
    const Tensor o = conv2d(one, p);
    for (std::size_t i = 0; i < o.size(); ++i) EXPECT_EQ(o.data()[i], all.data()[n * o.size() + i]);
  }
}

TEST(Conv2d, RejectsBadConfigurations) {
  const Tensor x({1, 3, 4, 4});
  EXPECT_THROW(conv2d(x, ConvParams::zeros({4, 4, 3, 3, 1, 1, 1, 1})), ParameterError);  // channel mismatch
  EXPECT_THROW(conv_output_dims({1, 3, 4, 4}, {3, 4, 3, 3, 1, 1, 2, 1}), ParameterError);  // groups
  EXPECT_THROW(conv_output_dims({1, 3, 2, 2}, {3, 3, 3, 3, 1, 2, 1, 0}), ParameterError);  // kernel extent
}

TEST(Conv2dAdjoint, ZeroGradient) {
  const ConvParams p = random_params({2, 3, 3, 3, 1, 1, 1, 1}, 1);
  const Tensor x = random_tensor({1, 2, 5, 5}, 2);
  const ConvGrads g = conv2d_adjoint(x, p, Tensor({1, 3, 5, 5}));
  for (const Tensor* t : {&g.input, &g.weight, &g.bias})
    for (double v : t->data()) EXPECT_EQ(v, 0.0);
}

TEST(Conv2dAdjoint, IdentityKernelPassesGradient) {
  ConvParams p = ConvParams::zeros({1, 1, 1, 1, 1, 1, 1, 0});
  p.weight.fill(1.0);
  const Tensor g = random_tensor({1, 1, 4, 6}, 3);
  EXPECT_EQ(conv2d_adjoint(random_tensor({1, 1, 4, 6}, 4), p, g).input, g);
}

TEST(Conv2dAdjoint, MatchesFiniteDifferences) {
  const ConvSpec specs[] = {{2, 3, 3, 3, 1, 1, 1, 1}, {2, 4, 3, 3, 2, 1, 2, 1}, {2, 2, 3, 3, 1, 2, 1, 2}};
  std::uint64_t seed = 40;
  for (const ConvSpec& s : specs) {
    const Tensor x = random_tensor({1, 2, 5, 5}, seed++);
    ConvParams p = random_params(s, seed++);
    const Tensor w = random_tensor(conv_output_dims(x.dims(), s), seed++);
    const ConvGrads g = conv2d_adjoint(x, p, w);
    EXPECT_LE(fd_check([&](const Tensor& xi) { return conv2d(xi, p); }, x, w, g.input), 1e-6);
    EXPECT_LE(fd_check(
                  [&](const Tensor& wi) {
                    ConvParams q = p;
                    q.weight = wi;
                    return conv2d(x, q);
                  },
                  p.weight, w, g.weight),
              1e-6);
    EXPECT_LE(fd_check(
                  [&](const Tensor& bi) {
                    ConvParams q = p;
                    q.bias = bi;
                    return conv2d(x, q);
                  },
                  p.bias, w, g.bias),
              1e-6);
  }
}

TEST(Resample, ConstantStaysConstant) {
  const Tensor c({1, 2, 4, 6}, 0.7);
  for (ScaleFactor f : {kHalf, kDouble, kQuadruple})
    for (ResampleMode m : {ResampleMode::Bilinear, ResampleMode::Nearest})
      for (double v : testutil::values(resample(c, f, m))) EXPECT_DOUBLE_EQ(v, 0.7);
}

TEST(Resample, NearestUpThenDownIsIdentity) {
  const Tensor x = random_tensor({2, 3, 3, 5}, 1);
  EXPECT_EQ(resample(resample(x, kDouble, ResampleMode::Nearest), kHalf, ResampleMode::Nearest), x);
}

TEST(Resample, BilinearHalfPixelCenters) {
  const Tensor x({1, 1, 2, 2}, std::vector<double>{0, 1, 2, 3});
  const Tensor y = resample(x, kDouble, ResampleMode::Bilinear);
  // Output pixel o samples source coordinate (o + 0.5) / 2 - 0.5, clamped to [0, 1].
  const double c[4] = {0.0, 0.25, 0.75, 1.0};
  for (int oy = 0; oy < 4; ++oy)
    for (int ox = 0; ox < 4; ++ox) EXPECT_NEAR(y.at(0, 0, oy, ox), 2 * c[oy] + c[ox], 1e-15);
}

TEST(Resample, OddDimsRejectedForHalf) {
  EXPECT_THROW(resample(Tensor({1, 1, 3, 4}), kHalf, ResampleMode::Bilinear), ParameterError);
}

TEST(Resample, AdjointMatchesFiniteDifferences) {
  for (ScaleFactor f : {kHalf, kDouble, kQuadruple})
    for (ResampleMode m : {ResampleMode::Bilinear, ResampleMode::Nearest}) {
      const Tensor x = random_tensor({1, 2, 4, 6}, 3);
      const Tensor w = random_tensor(resample_output_dims(x.dims(), f), 4);
      const Tensor g = resample_adjoint(x.dims(), f, m, w);
      EXPECT_LE(fd_check([&](const Tensor& xi) { return resample(xi, f, m); }, x, w, g), 1e-6);
    }
}

TEST(Eltwise, Examples) {
  const Tensor a = random_tensor({1, 2, 3, 3}, 1);
  EXPECT_EQ(eltwise(a, Tensor(a.dims()), EltwiseKind::Sum), a);
  EXPECT_EQ(eltwise(a, a, EltwiseKind::Max), a);
  Tensor mask(a.dims());
  for (std::size_t i = 0; i < mask.size(); i += 2) mask.data()[i] = 1.0;
  const Tensor m = eltwise(a, mask, EltwiseKind::Product);
  for (std::size_t i = 0; i < m.size(); ++i) EXPECT_EQ(m.data()[i], i % 2 == 0 ? a.data()[i] : 0.0);
  EXPECT_THROW(eltwise(a, Tensor({1, 2, 3, 4}), EltwiseKind::Sum), ParameterError);
}

TEST(Eltwise, AdjointMatchesFiniteDifferences) {
  const Tensor a = random_tensor({1, 2, 3, 3}, 5);
  const Tensor b = random_tensor({1, 2, 3, 3}, 6);
  const Tensor w = random_tensor({1, 2, 3, 3}, 7);
  for (EltwiseKind k : {EltwiseKind::Sum, EltwiseKind::Max, EltwiseKind::Product}) {
    const PairGrads g = eltwise_adjoint(a, b, k, w);
    EXPECT_LE(fd_check([&](const Tensor& ai) { return eltwise(ai, b, k); }, a, w, g.a), 1e-6);
    EXPECT_LE(fd_check([&](const Tensor& bi) { return eltwise(a, bi, k); }, b, w, g.b), 1e-6);
  }
}

TEST(Activation, SigmoidAndSoftmaxValues) {
  EXPECT_EQ(sigmoid(0.0), 0.5);
  const Tensor equal({1, 2, 1, 1}, 3.0);
  for (double v : testutil::values(softmax_channels(equal))) EXPECT_DOUBLE_EQ(v, 0.5);
  const Tensor sm = softmax_channels(Tensor({1, 2, 1, 1}, std::vector<double>{1, 2}));
  EXPECT_NEAR(sm.data()[0], 0.26894, 1e-5);
  EXPECT_NEAR(sm.data()[1], 0.73106, 1e-5);
}

TEST(Activation, SoftmaxSumsToOneAndIsShiftInvariant) {
  const Tensor x = random_tensor({2, 5, 3, 4}, 9, -30, 30);
  const Tensor a = softmax_channels(x);
  Tensor shifted = x;
  for (double& v : shifted.data()) v += 123.25;
  EXPECT_LE(max_abs_diff(a, softmax_channels(shifted)), 1e-12);
  for (int n = 0; n < 2; ++n)
    for (int y = 0; y < 3; ++y)
      for (int xx = 0; xx < 4; ++xx) {
        double s = 0;
        for (int c = 0; c < 5; ++c) s += a.at(n, c, y, xx);
        EXPECT_NEAR(s, 1.0, 1e-12);
      }
  EXPECT_TRUE(softmax_channels(Tensor({1, 2, 1, 1}, std::vector<double>{1000, -1000})).all_finite());
}

TEST(Activation, AdjointsMatchFiniteDifferences) {
  Tensor x = random_tensor({1, 3, 3, 3}, 11, -2, 2);
  for (double& v : x.data())
    if (std::abs(v) < 1e-3) v = 0.5;  // keep away from the relu kink
  const Tensor w = random_tensor(x.dims(), 12);
  for (ActivationKind k : {ActivationKind::Relu, ActivationKind::Sigmoid}) {
    const Tensor y = activation(x, k);
    EXPECT_LE(fd_check([&](const Tensor& xi) { return activation(xi, k); }, x, w,
                       activation_adjoint(x, y, k, w)),
              1e-6);
  }
  const Tensor y = softmax_channels(x);
  EXPECT_LE(fd_check([](const Tensor& xi) { return softmax_channels(xi); }, x, w, softmax_channels_adjoint(y, w)),
            1e-6);
}

TEST(Pooling, Values) {
  EXPECT_EQ(pool_avg(Tensor({1, 1, 2, 2}, std::vector<double>{0, 2, 4, 6})).data()[0], 3.0);
  for (double v : testutil::values(pool_avg(Tensor({1, 2, 4, 4}, 1.5)))) EXPECT_EQ(v, 1.5);
  EXPECT_THROW(pool_avg(Tensor({1, 1, 3, 4})), ParameterError);
  const Tensor x = random_tensor({1, 2, 4, 6}, 3);
  const Tensor w = random_tensor({1, 2, 2, 3}, 4);
  EXPECT_LE(fd_check([](const Tensor& xi) { return pool_avg(xi); }, x, w, pool_avg_adjoint(x.dims(), w)), 1e-6);
}

TEST(BatchNorm, ConstantInput) {
  BatchNormParams p = BatchNormParams::identity(2);
  p.shift.fill(0.25);
  for (bool train : {true, false}) {
    const Tensor out = batchnorm(Tensor({2, 2, 3, 3}, 4.0), p, train).output;
    const double first = out.data()[0];
    for (double v : testutil::values(out)) EXPECT_DOUBLE_EQ(v, first);
  }
}

TEST(BatchNorm, TrainModeMoments) {
  // Unit-variance synthetic data: standardized output then scale and shift.
  std::mt19937_64 rng(5);
  std::normal_distribution<double> dist(0.0, 1.0);
  Tensor x({4, 2, 16, 16});
  for (double& v : x.data()) v = dist(rng);
  BatchNormParams p = BatchNormParams::identity(2);
  p.scale.data()[0] = 2.0;
  p.scale.data()[1] = 0.5;
  p.shift.data()[0] = -1.0;
  p.shift.data()[1] = 3.0;
  const Tensor out = batchnorm(x, p, true).output;
  for (int c = 0; c < 2; ++c) {
    double mean = 0;
    double sq = 0;
    int count = 0;
    for (int n = 0; n < 4; ++n)
      for (double v : out.plane(n, c)) {
        mean += v;
        sq += v * v;
        ++count;
      }
    mean /= count;
    const double sd = std::sqrt(sq / count - mean * mean);
    EXPECT_NEAR(mean, p.shift.data()[c], 1e-6);
    EXPECT_NEAR(sd, p.scale.data()[c], 1e-6);
  }
}

TEST(BatchNorm, InferenceIsDeterministicAndUsesRunningStats) {
  BatchNormParams p = BatchNormParams::identity(1);
  p.running_mean.fill(2.0);
  p.running_var.fill(4.0);
  const Tensor x({1, 1, 1, 2}, std::vector<double>{2.0, 6.0});
  const Tensor a = batchnorm(x, p, false).output;
  EXPECT_EQ(a, batchnorm(x, p, false).output);
  EXPECT_NEAR(a.data()[0], 0.0, 1e-12);
  EXPECT_NEAR(a.data()[1], 2.0, 1e-6);
}

TEST(BatchNorm, AdjointMatchesFiniteDifferences) {
  const Tensor x = random_tensor({2, 3, 3, 3}, 21);
  BatchNormParams p = BatchNormParams::identity(3);
  p.scale = random_tensor({1, 3, 1, 1}, 22, 0.5, 1.5);
  p.shift = random_tensor({1, 3, 1, 1}, 23);
  p.running_mean = random_tensor({1, 3, 1, 1}, 24);
  p.running_var = random_tensor({1, 3, 1, 1}, 25, 0.5, 2.0);
  const Tensor w = random_tensor(x.dims(), 26);
  for (bool train : {true, false}) {
    const BatchNormResult fwd = batchnorm(x, p, train);
    const BatchNormGrads g = batchnorm_adjoint(x, p, train, fwd, w);
    EXPECT_LE(fd_check([&](const Tensor& xi) { return batchnorm(xi, p, train).output; }, x, w, g.input), 1e-5);
    EXPECT_LE(fd_check(
                  [&](const Tensor& si) {
                    BatchNormParams q = p;
                    q.scale = si;
                    return batchnorm(x, q, train).output;
                  },
                  p.scale, w, g.scale),
              1e-6);
    EXPECT_LE(fd_check(
                  [&](const Tensor& si) {
                    BatchNormParams q = p;
                    q.shift = si;
                    return batchnorm(x, q, train).output;
                  },
                  p.shift, w, g.shift),
              1e-6);
  }
}

TEST(MapOps, ScaleByMapAndSliceAdjoints) {
  const Tensor m = random_tensor({2, 1, 3, 3}, 1);
  const Tensor x = random_tensor({2, 4, 3, 3}, 2);
  const Tensor w = random_tensor(x.dims(), 3);
  const PairGrads g = scale_by_map_adjoint(m, x, w);
  EXPECT_LE(fd_check([&](const Tensor& mi) { return scale_by_map(mi, x); }, m, w, g.a), 1e-6);
  EXPECT_LE(fd_check([&](const Tensor& xi) { return scale_by_map(m, xi); }, x, w, g.b), 1e-6);
  const Tensor ws = random_tensor({2, 2, 3, 3}, 4);
  EXPECT_LE(fd_check([](const Tensor& xi) { return channel_slice(xi, 1, 2); }, x, ws,
                     channel_slice_adjoint(x.dims(), 1, ws)),
            1e-6);
  EXPECT_THROW(channel_slice(x, 3, 2), ParameterError);
}

TEST(Purity, RepeatedCallsAreBitIdentical) {
  const Tensor x = random_tensor({1, 4, 8, 8}, 77);
  const ConvParams p = random_params({4, 4, 3, 3, 1, 2, 2, 2}, 78);
  EXPECT_EQ(conv2d(x, p), conv2d(x, p));
  EXPECT_EQ(resample(x, kDouble, ResampleMode::Bilinear), resample(x, kDouble, ResampleMode::Bilinear));
  EXPECT_EQ(softmax_channels(x), softmax_channels(x));
}
