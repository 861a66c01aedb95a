#include <benchmark/benchmark.h>

#include <random>

#include "remar/losses.hpp"
#include "remar/network.hpp"
#include "remar/ops.hpp"
#include "remar/ssim.hpp"

using namespace remar;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, bool grad = false) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist;
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), grad);
}

void BM_Conv2d(benchmark::State& state) {
  const std::size_t c = state.range(0), s = state.range(1);
  const auto x = random_tensor({1, c, s, s}, 1);
  const auto w = random_tensor({c, c, 3, 3}, 2);
  const auto b = random_tensor({c}, 3);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(ops::conv2d(x, w, b, 1, 1));
}
BENCHMARK(BM_Conv2d)->Args({16, 64})->Args({32, 128});

void BM_SsimIndex(benchmark::State& state) {
  const std::size_t s = state.range(0);
  const auto x = random_tensor({1, 1, s, s}, 4);
  const auto y = random_tensor({1, 1, s, s}, 5);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(ssim_index(x, y));
}
BENCHMARK(BM_SsimIndex)->Arg(64)->Arg(128);

void BM_Dft2d(benchmark::State& state) {
  const std::size_t s = state.range(0);
  const auto x = random_tensor({1, 1, s, s}, 6);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(ops::dft2d(x));
}
BENCHMARK(BM_Dft2d)->Arg(64)->Arg(128);

void BM_ModelForward(benchmark::State& state) {
  ModelConfig cfg;
  const ReMarNet net(cfg, 1);
  const auto x = random_tensor({1, 1, 64, 64}, 7);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(x, 0, Mode::Eval));
}
BENCHMARK(BM_ModelForward);

void BM_TrainStep(benchmark::State& state) {
  ModelConfig cfg;
  ReMarNet net(cfg, 1);
  const auto x = random_tensor({2, 1, 64, 64}, 8);
  const auto t = random_tensor({2, 1, 64, 64}, 9);
  const Tensor w({2, 1, 64, 64}, 1.0);
  const auto spec = LossSpec::from_label("l1+ssim+ffl");
  std::uint64_t step = 0;
  for (auto _ : state) {
    net.parameters().zero_grad();
    total_loss(net.forward(x, ++step, Mode::Train), t, w, spec).total.backward();
  }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
