#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "remar/ops.hpp"
#include "remar/serialize.hpp"
#include "remar/tensor.hpp"
#include "remar/verify.hpp"

using namespace remar;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, bool rg = false) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v), rg);
}

}  // namespace

TEST(Tensor, ShapeAndFill) {
  Tensor t({2, 3}, 1.5);
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.rank(), 2u);
  for (double v : t.data()) EXPECT_EQ(v, 1.5);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>(3)), std::invalid_argument);
}

TEST(Autodiff, SumGradientIsOnes) {
  Tensor x = random_tensor({3, 4}, 1, true);
  ops::sum(x).backward();
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Autodiff, SumOfSquaresGradientIsTwiceInput) {
  Tensor x = random_tensor({5}, 2, true);
  ops::sum(ops::mul(x, x)).backward();
  for (std::size_t i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2.0 * x.data()[i]);
}

TEST(Autodiff, LeafGradientsAccumulateAcrossBackwardCalls) {
  Tensor x({2}, 1.0, true);
  ops::sum(x).backward();
  ops::sum(x).backward();
  EXPECT_EQ(x.grad()[0], 2.0);
  x.zero_grad();
  ops::sum(x).backward();
  EXPECT_EQ(x.grad()[0], 1.0);
}

TEST(Autodiff, NonScalarBackwardRejected) {
  Tensor x({2}, 1.0, true);
  EXPECT_THROW(ops::relu(x).backward(), std::exception);
}

TEST(Autodiff, NoGradGuardSkipsGraph) {
  Tensor x({2}, 1.0, true);
  {
    NoGradGuard guard;
    EXPECT_FALSE(ops::sum(x).requires_grad());
  }
  EXPECT_TRUE(ops::sum(x).requires_grad());
}

TEST(Autodiff, DetachCutsGradient) {
  Tensor x({3}, 2.0, true);
  const Tensor y = ops::mul(x.detach(), x);
  ops::sum(y).backward();
  for (double g : x.grad()) EXPECT_EQ(g, 2.0);
}

TEST(Conv2d, IdentityKernelPreservesInput) {
  Tensor x = random_tensor({1, 1, 3, 3}, 3);
  std::vector<double> k(9, 0.0);
  k[4] = 1.0;
  const Tensor y = ops::conv2d(x, Tensor({1, 1, 3, 3}, k), Tensor(), 1, 1);
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(y.data()[i], x.data()[i]);
}

TEST(Conv2d, OnesInputOnesKernelGivesNine) {
  const Tensor y = ops::conv2d(Tensor({1, 1, 4, 4}, 1.0), Tensor({1, 1, 3, 3}, 1.0), Tensor());
  ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 9.0);
}

TEST(Conv2d, StrideTwoHalvesEvenInputs) {
  const Tensor y =
      ops::conv2d(Tensor({1, 2, 8, 8}, 1.0), Tensor({3, 2, 3, 3}, 1.0), Tensor({3}, 0.0), 2, 1);
  EXPECT_EQ(y.shape(), (Shape{1, 3, 4, 4}));
}

TEST(Conv2d, ChannelMismatchNamesDimension) {
  try {
    ops::conv2d(Tensor({1, 2, 4, 4}), Tensor({1, 3, 3, 3}), Tensor());
    FAIL() << "expected rejection";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("channel"), std::string::npos);
  }
}

TEST(DepthwiseConv, PerChannelIdentity) {
  Tensor x = random_tensor({2, 3, 5, 5}, 4);
  std::vector<double> k(27, 0.0);
  for (int c = 0; c < 3; ++c) k[c * 9 + 4] = 1.0;
  const Tensor y = ops::depthwise_conv2d(x, Tensor({3, 1, 3, 3}, k), Tensor(), 1);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y.data()[i], x.data()[i]);
  EXPECT_THROW(ops::depthwise_conv2d(x, Tensor({2, 1, 3, 3}), Tensor(), 1), std::invalid_argument);
}

TEST(PointwiseConv, IdentityMixing) {
  Tensor x = random_tensor({1, 3, 4, 4}, 5);
  std::vector<double> w(9, 0.0);
  for (int c = 0; c < 3; ++c) w[c * 3 + c] = 1.0;
  const Tensor y = ops::pointwise_conv2d(x, Tensor({3, 3, 1, 1}, w), Tensor());
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(y.data()[i], x.data()[i]);
}

TEST(BatchNorm, TrainModeNormalizes) {
  Tensor x = random_tensor({4, 2, 5, 5}, 6);
  ops::BatchNormStats stats(2);
  const Tensor y = ops::batchnorm2d(x, Tensor({2}, 1.0), Tensor({2}, 0.0), stats, Mode::Train);
  for (std::size_t c = 0; c < 2; ++c) {
    double m = 0, v = 0;
    std::size_t n = 0;
    for (std::size_t b = 0; b < 4; ++b) {
      for (std::size_t i = 0; i < 25; ++i) {
        m += y.data()[(b * 2 + c) * 25 + i];
        ++n;
      }
    }
    m /= n;
    for (std::size_t b = 0; b < 4; ++b) {
      for (std::size_t i = 0; i < 25; ++i) {
        const double d = y.data()[(b * 2 + c) * 25 + i] - m;
        v += d * d;
      }
    }
    v /= n;
    EXPECT_NEAR(m, 0.0, 1e-6);
    EXPECT_NEAR(v, 1.0, 1e-4);
  }
}

TEST(BatchNorm, ConstantChannelGivesBeta) {
  ops::BatchNormStats stats(1);
  const Tensor y =
      ops::batchnorm2d(Tensor({2, 1, 3, 3}, 4.0), Tensor({1}, 2.0), Tensor({1}, 0.3), stats, Mode::Train);
  for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 0.3);
}

TEST(BatchNorm, RunningStatsUpdateAndEvalUsesThem) {
  ops::BatchNormStats stats(1);
  Tensor x({1, 1, 1, 2}, std::vector<double>{1.0, 3.0});
  ops::batchnorm2d(x, Tensor({1}, 1.0), Tensor({1}, 0.0), stats, Mode::Train);
  EXPECT_DOUBLE_EQ(stats.running_mean[0], 0.2);
  // Unbiased variance of {1,3} is 2.
  EXPECT_DOUBLE_EQ(stats.running_var[0], 0.9 * 1.0 + 0.1 * 2.0);
  const Tensor y = ops::batchnorm2d(x, Tensor({1}, 1.0), Tensor({1}, 0.0), stats, Mode::Eval);
  EXPECT_NEAR(y.data()[0], (1.0 - 0.2) / std::sqrt(1.1 + 1e-5), 1e-12);
}

TEST(Pooling, GlobalAvgPoolOfConstant) {
  const Tensor y = ops::global_avg_pool(Tensor({2, 3, 4, 4}, 0.7));
  ASSERT_EQ(y.shape(), (Shape{2, 3}));
  for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 0.7);
}

TEST(Pooling, UpsampleThenAvgPoolIsIdentity) {
  Tensor x = random_tensor({1, 2, 3, 3}, 7);
  const Tensor y = ops::avg_pool2x(ops::upsample_nearest2x(x));
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(y.data()[i], x.data()[i]);
}

TEST(Broadcast, IncompatibleShapesRejected) {
  EXPECT_THROW(ops::add(Tensor({2, 3, 4, 4}), Tensor({5})), std::invalid_argument);
}

TEST(Dft2d, ConstantImageIsDcOnly) {
  const std::size_t d = 6;
  const auto f = ops::dft2d(Tensor({1, 1, d, d}, 0.5));
  EXPECT_NEAR(f.real.data()[0], 0.5 * d * d, 1e-9);
  for (std::size_t i = 1; i < d * d; ++i) {
    EXPECT_NEAR(f.real.data()[i], 0.0, 1e-9);
    EXPECT_NEAR(f.imag.data()[i], 0.0, 1e-9);
  }
}

TEST(Dft2d, ImpulseHasFlatSpectrum) {
  std::vector<double> x(25, 0.0);
  x[0] = 1.0;
  const auto f = ops::dft2d(Tensor({1, 1, 5, 5}, x));
  for (std::size_t i = 0; i < 25; ++i) {
    EXPECT_NEAR(f.real.data()[i], 1.0, 1e-12);
    EXPECT_NEAR(f.imag.data()[i], 0.0, 1e-12);
  }
}

TEST(Dft2d, MatchesDirectDftOnRectangle) {
  Tensor x = random_tensor({1, 1, 7, 5}, 8);
  const auto f = ops::dft2d(x);
  const auto ref = oracle::direct_dft(x.data(), 7, 5);
  for (std::size_t i = 0; i < 35; ++i) {
    EXPECT_NEAR(f.real.data()[i], ref.real[i], 1e-10);
    EXPECT_NEAR(f.imag.data()[i], ref.imag[i], 1e-10);
  }
}

TEST(GradCheck, ConvAndSeparableOpsPass) {
  std::mt19937_64 rng(9);
  Tensor x = random_tensor({1, 2, 5, 5}, 10, true);
  Tensor w = random_tensor({2, 2, 3, 3}, 11, true);
  Tensor dw = random_tensor({2, 1, 3, 3}, 12, true);
  Tensor r = random_tensor({1, 2, 5, 5}, 13);
  const auto g = check_gradients({x, w, dw}, [&] {
    const Tensor h = ops::depthwise_conv2d(ops::conv2d(x, w, Tensor(), 1, 1), dw, Tensor(), 1);
    return ops::sum(ops::mul(ops::sigmoid(h), r));
  });
  EXPECT_LT(g.max_rel_error, 1e-6);
}

TEST(GradCheck, DetectsInjectedConvFault) {
  Tensor x = random_tensor({1, 1, 4, 4}, 14, true);
  Tensor w = random_tensor({1, 1, 3, 3}, 15, true);
  ops::set_conv2d_weight_grad_scale(1.5);
  const auto g = check_gradients({w}, [&] { return ops::sum(ops::conv2d(x, w, Tensor(), 1, 1)); });
  ops::set_conv2d_weight_grad_scale(1.0);
  EXPECT_GT(g.max_rel_error, 0.1);
}

TEST(Serialize, RoundTripIsFloat32) {
  std::stringstream buf;
  const std::vector<double> v{1.0, -2.5, 0.1};
  write_tensor(buf, {3}, v);
  EXPECT_EQ(buf.str().size(), tensor_record_size({3}));
  EXPECT_EQ(buf.str().substr(0, 4), "RMDS");
  const auto rec = read_tensor(buf);
  EXPECT_EQ(rec.shape, (Shape{3}));
  EXPECT_EQ(rec.values[0], 1.0);
  EXPECT_EQ(rec.values[2], static_cast<double>(0.1f));
}

TEST(Serialize, TruncatedRecordRejected) {
  std::stringstream buf;
  write_tensor(buf, {4}, std::vector<double>(4, 1.0));
  std::string s = buf.str();
  s.resize(s.size() - 3);
  std::stringstream cut(s);
  EXPECT_THROW(read_tensor(cut), std::exception);
}
