#include <benchmark/benchmark.h>

#include <random>

#include "sparsefcn/cost.hpp"
#include "sparsefcn/pipeline.hpp"
#include "sparsefcn/scene.hpp"
#include "sparsefcn/trainer.hpp"

using namespace sparsefcn;

namespace {

Tensor random_tensor(Dims d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  Tensor t(d);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

ConvParams random_conv(const ConvSpec& spec, std::uint64_t seed) {
  return {spec, random_tensor(spec.weight_dims(), seed), random_tensor(spec.bias_dims(), seed + 1)};
}

const ModelGraph& toy_isctf() {
  static const ModelGraph g = build_two_column(TwoColumnConfig{});
  return g;
}

}  // namespace

static void BM_Conv3x3(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const ConvSpec spec{c, c, 3, 3, 1, 1, 1, 1};
  const ConvParams p = random_conv(spec, 1);
  const Tensor x = random_tensor({1, c, 32, 64}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, p));
  state.counters["MAC/s"] =
      benchmark::Counter(static_cast<double>(mac_of_conv(x.dims(), spec)), benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_Conv3x3)->Arg(8)->Arg(32);

static void BM_Conv3x3Adjoint(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const ConvSpec spec{c, c, 3, 3, 1, 1, 1, 1};
  const ConvParams p = random_conv(spec, 1);
  const Tensor x = random_tensor({1, c, 32, 64}, 3);
  const Tensor g = random_tensor(conv_output_dims(x.dims(), spec), 4);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d_adjoint(x, p, g));
}
BENCHMARK(BM_Conv3x3Adjoint)->Arg(8)->Arg(32);

static void BM_Infer(benchmark::State& state) {
  const ModelGraph& g = toy_isctf();
  const SceneSample s = gen_scene(1, 64, 128, 8);
  const bool fast = state.range(0) != 0;
  const double p = static_cast<double>(state.range(1)) / 32.0;
  for (auto _ : state) benchmark::DoNotOptimize(fast ? fast_infer(g, s.image, p) : classic_infer(g, s.image, p));
  state.SetLabel(fast ? "fast" : "classic");
}
BENCHMARK(BM_Infer)->Args({0, 32})->Args({1, 32})->Args({1, 16})->Args({1, 8})->Unit(benchmark::kMillisecond);

static void BM_TrainIteration(benchmark::State& state) {
  const auto data = make_dataset(Split::Train, 4, 64, 128, 8);
  TrainConfig cfg;
  cfg.iterations = 1;
  for (auto _ : state) {
    state.PauseTiming();
    ModelGraph g = toy_isctf();
    state.ResumeTiming();
    benchmark::DoNotOptimize(train(g, cfg, data));
  }
}
BENCHMARK(BM_TrainIteration)->Unit(benchmark::kMillisecond);

static void BM_CostModel(benchmark::State& state) {
  const ModelGraph& g = toy_isctf();
  for (auto _ : state) benchmark::DoNotOptimize(mac_of_pipeline(g, {1, 3, 64, 128}, InferMode::Fast, 16));
}
BENCHMARK(BM_CostModel);
BENCHMARK_MAIN();
