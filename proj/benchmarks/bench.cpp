#include <benchmark/benchmark.h>

#include <random>

#include "mmca/features.hpp"
#include "mmca/model.hpp"
#include "mmca/objective.hpp"
#include "mmca/synth.hpp"
#include "mmca/tensor.hpp"
#include "mmca/training.hpp"

using namespace mmca;

static void BM_Matmul(benchmark::State& state) {
  int n = static_cast<int>(state.range(0));
  std::mt19937_64 rng(1);
  Tensor a = Tensor::uniform({n, n}, rng, -1.0, 1.0, false);
  Tensor b = Tensor::uniform({n, n}, rng, -1.0, 1.0, false);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

static ModelConfig bench_config() {
  ModelConfig c;
  c.n_segments = 20;
  c.d_f = 24;
  c.d_dow = 2;
  c.d_tod = 2;
  c.d_a = 80;
  c.layers = 3;
  c.heads = 4;
  c.dropout = 0.0;
  return c;
}

static BatchInput random_batch(const ModelConfig& c, int B) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<NormalizedWindow> windows(B);
  for (auto& w : windows) {
    w.raw.H = c.H;
    w.raw.F = c.F;
    w.raw.N = c.n_segments;
    w.macro.resize(static_cast<size_t>(c.H) * c.n_segments * kNumMacro);
    w.micro.resize(static_cast<size_t>(c.H) * c.n_segments * kNumMicro);
    w.target.resize(static_cast<size_t>(c.F) * c.n_segments);
    for (auto& v : w.macro) v = u(rng);
    for (auto& v : w.micro) v = u(rng);
    for (auto& v : w.target) v = u(rng);
    for (int h = 0; h < c.H; ++h) {
      w.raw.tod_index.push_back(h);
      w.raw.dow_index.push_back(2);
    }
  }
  std::vector<const NormalizedWindow*> ptrs;
  for (const auto& w : windows) ptrs.push_back(&w);
  return make_batch(ptrs, c);
}

static void BM_ForwardPass(benchmark::State& state) {
  ModelConfig c = bench_config();
  ModelParams params = init_params(c, 3);
  BatchInput in = random_batch(c, static_cast<int>(state.range(0)));
  std::mt19937_64 drng(0);
  for (auto _ : state)
    benchmark::DoNotOptimize(forward_model(in, params, c, false, drng));
}
BENCHMARK(BM_ForwardPass)->Arg(1)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);

static void BM_TrainStep(benchmark::State& state) {
  ModelConfig c = bench_config();
  ModelParams params = init_params(c, 3);
  TrainConfig tc;
  AdamOptimizer opt(params, tc);
  BatchInput in = random_batch(c, 8);
  std::mt19937_64 drng(0);
  for (auto _ : state) {
    auto out = forward_model(in, params, c, true, drng);
    auto loss = t_nll(out.mean, out.scale2, out.df, in.target);
    loss.backward();
    opt.step();
    opt.zero_grad();
  }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

static void BM_FeatureExtraction(benchmark::State& state) {
  ScenarioConfig sc;
  sc.n_segments = 20;
  sc.days = 1;
  sc.vehicles_per_interval = 6.0;
  sc.seed = 4;
  auto gen = generate(sc);
  for (auto _ : state) {
    auto trajs = group_and_clean(gen.points);
    benchmark::DoNotOptimize(build_frame_grid(trajs, gen.index));
  }
}
BENCHMARK(BM_FeatureExtraction)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
