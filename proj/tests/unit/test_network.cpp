#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>

#include "remar/checkpoint.hpp"
#include "remar/losses.hpp"
#include "remar/network.hpp"
#include "remar/ops.hpp"
#include "remar/verify.hpp"

using namespace remar;

namespace {

Tensor random_input(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v));
}

ModelConfig small(std::size_t levels = 3, std::size_t base = 8) {
  ModelConfig c;
  c.levels = levels;
  c.base_channels = base;
  return c;
}

void set_params(ReMarNet& net, const std::string& prefix, double value,
                const std::string& skip_suffix = "\x01") {
  for (auto& p : net.parameters().items()) {
    if (p.name.rfind(prefix, 0) != 0) continue;
    if (p.name.find(skip_suffix) != std::string::npos) continue;
    for (double& v : p.tensor.mutable_data()) v = value;
  }
}

}  // namespace

TEST(ModelConfig, ValidationAndInputDivisibility) {
  ModelConfig c = small();
  EXPECT_NO_THROW(c.check_input(64, 64));
  EXPECT_THROW(c.check_input(62, 64), std::invalid_argument);
  c.levels = 1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = small(3, 6);
  c.se_reduction = 4;
  EXPECT_THROW(ReMarNet{c}, std::invalid_argument);
}

TEST(ModelConfig, MapRoundTrip) {
  ModelConfig c = small(4, 12);
  c.use_noise = false;
  c.sigma_k = 0.02;
  EXPECT_EQ(ModelConfig::from_map(c.to_map()), c);
}

TEST(Encoder, FeatureShapes) {
  ReMarNet net(small());
  const auto f = net.encode(Tensor({2, 1, 64, 64}, 0.1), 0, Mode::Eval);
  ASSERT_EQ(f.size(), 3u);
  EXPECT_EQ(f[0].shape(), (Shape{2, 8, 64, 64}));
  EXPECT_EQ(f[1].shape(), (Shape{2, 16, 32, 32}));
  EXPECT_EQ(f[2].shape(), (Shape{2, 32, 16, 16}));
}

TEST(Encoder, InputNoiseStatistics) {
  ReMarNet net(small());
  const Tensor x({1, 1, 512, 256}, 0.0);
  std::mt19937_64 rng(42);
  const Tensor noisy = net.perturb_input(x, rng, Mode::Train);
  double sq = 0.0, mean = 0.0;
  for (double v : noisy.data()) mean += v;
  mean /= static_cast<double>(noisy.numel());
  for (double v : noisy.data()) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / static_cast<double>(noisy.numel() - 1));
  EXPECT_GE(sd, 0.009);
  EXPECT_LE(sd, 0.011);
  std::mt19937_64 rng2(42);
  const Tensor clean = net.perturb_input(x, rng2, Mode::Eval);
  for (double v : clean.data()) EXPECT_EQ(v, 0.0);
}

TEST(Forward, ShapePreservedAndEvalDeterministic) {
  ReMarNet net(small(), 3);
  const Tensor x = random_input({4, 1, 64, 64}, 1);
  const Tensor a = net.forward(x, 5, Mode::Eval);
  const Tensor b = net.forward(x, 6, Mode::Eval);
  ASSERT_EQ(a.shape(), x.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) ASSERT_EQ(a.data()[i], b.data()[i]);
}

TEST(Forward, TrainNoiseDependsOnSeed) {
  ReMarNet net(small(2, 4), 3);
  const Tensor x = random_input({2, 1, 32, 32}, 2);
  const Tensor a = net.forward(x, 5, Mode::Train);
  const Tensor b = net.forward(x, 5, Mode::Train);
  const Tensor c = net.forward(x, 6, Mode::Train);
  bool differs = false;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    ASSERT_EQ(a.data()[i], b.data()[i]);
    differs = differs || a.data()[i] != c.data()[i];
  }
  EXPECT_TRUE(differs);
}

TEST(Forward, NoiseFreeVariantMatchesFullInEval) {
  ReMarNet full(small(), 9);
  ReMarNet no_noise(apply_variant(small(), "++"), 1);
  no_noise.load_state(full.state());
  const Tensor x = random_input({1, 1, 32, 32}, 3);
  const Tensor a = full.forward(x, 1, Mode::Eval);
  const Tensor b = no_noise.forward(x, 1, Mode::Eval);
  for (std::size_t i = 0; i < a.numel(); ++i) ASSERT_EQ(a.data()[i], b.data()[i]);
}

TEST(Forward, SigmaLGradientNonzero) {
  ReMarNet net(small(2, 4), 4);
  const Tensor x = random_input({2, 1, 16, 16}, 4);
  const Tensor t = random_input({2, 1, 16, 16}, 5);
  net.parameters().zero_grad();
  mse_loss(net.forward(x, 8, Mode::Train), t).backward();
  ASSERT_TRUE(net.sigma_l().has_grad());
  EXPECT_NE(net.sigma_l().grad()[0], 0.0);
}

TEST(RcsSE, ZeroInputGivesZero) {
  ReMarNet net(small(), 1);
  const Tensor y = net.rcsse(1).forward(Tensor({1, 8, 8, 8}, 0.0));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(RcsSE, ZeroedWeightsGiveHalfPlusHalf) {
  ReMarNet net(small(), 1);
  set_params(net, "skip.1.", 0.0);
  const Tensor f = random_input({2, 8, 8, 8}, 6);
  const Tensor y = net.rcsse(1).forward(f);
  for (std::size_t i = 0; i < f.numel(); ++i) EXPECT_DOUBLE_EQ(y.data()[i], f.data()[i]);
}

TEST(RcsSE, GatesInUnitIntervalAndOutputBounded) {
  ReMarNet net(small(), 2);
  const Tensor f = random_input({2, 8, 8, 8}, 7);
  const auto& block = net.rcsse(1);
  const Tensor gate = block.spatial_gate(f);
  for (double v : gate.data()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  const Tensor cg = block.channel_gate(f);
  EXPECT_EQ(cg.shape(), (Shape{2, 8}));
  const Tensor y = block.forward(f);
  for (std::size_t i = 0; i < f.numel(); ++i) {
    EXPECT_LE(std::abs(y.data()[i]), 2.0 * std::abs(f.data()[i]) + 1e-15);
  }
}

TEST(RcsSE, GradientCheck) {
  ReMarNet net(small(2, 4), 3);
  std::vector<Tensor> leaves;
  for (const auto& p : net.parameters().items()) {
    if (p.name.rfind("skip.1.", 0) == 0) leaves.push_back(p.tensor);
  }
  Tensor f = random_input({2, 4, 5, 5}, 8);
  f.set_requires_grad(true);
  leaves.push_back(f);
  const Tensor r = random_input(f.shape(), 9);
  const auto g = check_gradients(leaves, [&] { return ops::sum(ops::mul(net.rcsse(1).forward(f), r)); });
  EXPECT_LT(g.max_rel_error, 1e-4);
}

TEST(Skip, SaturatedGatesReduceToPlainSkip) {
  ReMarNet full(small(), 5);
  // Zero weights and strongly negative output biases drive both gates to 0.
  for (auto& p : full.parameters().items()) {
    if (p.name.rfind("skip.", 0) != 0) continue;
    const bool gate_bias = p.name.find("sse.bias") != std::string::npos ||
                           p.name.find("fc2.bias") != std::string::npos;
    for (double& v : p.tensor.mutable_data()) v = gate_bias ? -1000.0 : 0.0;
  }
  ReMarNet plain(apply_variant(small(), "+"), 0);
  plain.load_state(full.state());
  const Tensor x = random_input({2, 1, 32, 32}, 10);
  const Tensor a = full.forward(x, 3, Mode::Eval);
  const Tensor b = plain.forward(x, 3, Mode::Eval);
  for (std::size_t i = 0; i < a.numel(); ++i) ASSERT_EQ(a.data()[i], b.data()[i]);
  const Tensor f = random_input({1, 8, 4, 4}, 11);
  const Tensor s = full.skip(1, f);
  for (std::size_t i = 0; i < f.numel(); ++i) ASSERT_EQ(s.data()[i], f.data()[i]);
}

TEST(ResidualBlock, ZeroWeightsIsIdentity) {
  ReMarNet net(small(), 1);
  set_params(net, "bottleneck.0.", 0.0, "gamma");
  const Tensor f = random_input({2, 32, 8, 8}, 12);
  const Tensor y = net.bottleneck_block(0).forward(f, Mode::Train);
  for (std::size_t i = 0; i < f.numel(); ++i) EXPECT_DOUBLE_EQ(y.data()[i], f.data()[i]);
}

TEST(ParameterCount, ClosedForms) {
  EXPECT_EQ(conv_param_count(1, 8, 3), 80u);
  // Depthwise 3x3 on 8 channels + pointwise 8->16 vs a full 3x3 conv 8->16.
  EXPECT_EQ(conv_param_count(1, 8, 3) - 8 + 8 + conv_param_count(8, 16, 1), 224u);
  EXPECT_EQ(conv_param_count(8, 16, 3), 1168u);
  EXPECT_EQ(cbr_param_count(1, 8, 3), 80u + 16u);
  EXPECT_EQ(rcsse_param_count(8, 2), 9u + 36u + 40u);
  for (std::size_t c : {2, 4, 16, 64}) {
    EXPECT_LT(residual_block_param_count(c, 3, true), residual_block_param_count(c, 3, false));
  }
}

TEST(ParameterCount, MatchesInstantiatedNetworks) {
  for (std::size_t levels : {2, 3, 4}) {
    for (const auto& v : ablation_presets(small(levels, 8))) {
      ReMarNet net(v.config);
      EXPECT_EQ(net.parameters().total_size(), parameter_count(v.config)) << v.name;
    }
  }
}

TEST(ParameterCount, AblationOrdering) {
  std::map<std::string, std::size_t> n;
  for (const auto& v : ablation_presets(small())) n[v.name] = parameter_count(v.config);
  EXPECT_GT(n["++++"], n["full"]);
  EXPECT_GT(n["full"], n["++"]);
  EXPECT_GT(n["++"], n["+"]);
  EXPECT_GT(n["+"], n["+++"]);
  ModelConfig no_rcsse = small();
  no_rcsse.use_rcsse = false;
  EXPECT_GT(parameter_count(small()), parameter_count(no_rcsse));
}

TEST(Variants, Definitions) {
  const auto c = [](const std::string& v) { return apply_variant(small(), v); };
  EXPECT_TRUE(c("full").use_rcsse && c("full").use_noise && c("full").use_enresb);
  EXPECT_TRUE(!c("+").use_rcsse && c("+").use_noise && c("+").use_enresb);
  EXPECT_TRUE(c("++").use_rcsse && !c("++").use_noise && c("++").use_enresb);
  EXPECT_TRUE(!c("+++").use_rcsse && !c("+++").use_noise && c("+++").use_enresb);
  EXPECT_TRUE(!c("++++").use_rcsse && !c("++++").use_noise && !c("++++").use_enresb);
  EXPECT_THROW(c("+++++"), std::invalid_argument);
}

TEST(Checkpoint, RoundTripReproducesOutputs) {
  ReMarNet net(small(2, 4), 7);
  const Tensor x = random_input({1, 1, 16, 16}, 13);
  net.forward(x, 1, Mode::Train);  // moves the running statistics
  const auto path = std::filesystem::temp_directory_path() / "remar_test_ckpt.ckpt";
  save_checkpoint(path, net);
  const ReMarNet back = load_checkpoint(path);
  EXPECT_EQ(back.config(), net.config());
  const Tensor a = net.forward(x, 0, Mode::Eval);
  const Tensor b = back.forward(x, 0, Mode::Eval);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a.data()[i], b.data()[i], 1e-4);
  std::filesystem::remove(path);
}

TEST(Checkpoint, CorruptFileDiagnosed) {
  const auto path = std::filesystem::temp_directory_path() / "remar_test_bad.ckpt";
  {
    std::ofstream out(path);
    out << "not a checkpoint\n";
  }
  try {
    load_checkpoint(path);
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("corrupt checkpoint"), std::string::npos);
  }
  std::filesystem::remove(path);
}
