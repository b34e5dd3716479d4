// Microbenchmarks for the hot paths: dense convolution, the two central
// difference routes, and whole-model forward / training steps.
#include <benchmark/benchmark.h>

#include <random>

#include "cdcn/cdc.hpp"
#include "cdcn/losses.hpp"
#include "cdcn/model.hpp"
#include "cdcn/ops.hpp"
#include "cdcn/optim.hpp"
#include "cdcn/tensor.hpp"

extern "C" void openblas_set_num_threads(int);

namespace {

using namespace cdcn;

CdcLayer make_layer(int channels, float theta, std::mt19937& rng) {
  CdcLayer layer;
  layer.weight = Tensor::rand_uniform({channels, channels, 3, 3}, -0.2f, 0.2f, rng);
  layer.bias = Tensor::rand_uniform({channels}, -0.1f, 0.1f, rng);
  layer.theta = theta;
  return layer;
}

void BM_conv2d(benchmark::State& state) {
  const int c = int(state.range(0));
  const int s = int(state.range(1));
  std::mt19937 rng(1);
  Tensor x = Tensor::rand_uniform({1, c, s, s}, -1.0f, 1.0f, rng);
  Tensor w = Tensor::rand_uniform({c, c, 3, 3}, -0.2f, 0.2f, rng);
  Tensor b = Tensor::rand_uniform({c}, -0.1f, 0.1f, rng);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w, b, 1, 1));
}
BENCHMARK(BM_conv2d)->Args({16, 64})->Args({16, 128})->Args({64, 64});

void BM_cdc_reference(benchmark::State& state) {
  const int c = int(state.range(0));
  const int s = int(state.range(1));
  std::mt19937 rng(2);
  Tensor x = Tensor::rand_uniform({1, c, s, s}, -1.0f, 1.0f, rng);
  CdcLayer layer = make_layer(c, 0.7f, rng);
  for (auto _ : state) benchmark::DoNotOptimize(cdc(x, layer));
}
BENCHMARK(BM_cdc_reference)->Args({16, 64})->Args({64, 64});

void BM_cdc_decomposed(benchmark::State& state) {
  const int c = int(state.range(0));
  const int s = int(state.range(1));
  std::mt19937 rng(2);
  Tensor x = Tensor::rand_uniform({1, c, s, s}, -1.0f, 1.0f, rng);
  CdcLayer layer = make_layer(c, 0.7f, rng);
  for (auto _ : state) benchmark::DoNotOptimize(cdc_decomposed(x, layer));
}
BENCHMARK(BM_cdc_decomposed)->Args({16, 64})->Args({64, 64});

ModelConfig bench_config(int size, int channels) {
  ModelConfig mc;
  mc.theta = 0.7f;
  mc.init_channels = channels;
  mc.input_size = size;
  mc.modalities = {Modality::kRgb};
  return mc;
}

void BM_model_forward(benchmark::State& state) {
  Model model(bench_config(int(state.range(0)), int(state.range(1))), 3);
  std::mt19937 rng(3);
  Tensor x = Tensor::rand_uniform({1, 3, model.config().input_size, model.config().input_size},
                                  0.0f, 1.0f, rng);
  NoGradGuard inference;
  for (auto _ : state) benchmark::DoNotOptimize(model.forward_single(x, false));
}
BENCHMARK(BM_model_forward)->Args({64, 16})->Args({128, 16})->Unit(benchmark::kMillisecond);

void BM_model_train_step(benchmark::State& state) {
  Model model(bench_config(64, 16), 3);
  std::mt19937 rng(4);
  Tensor x = Tensor::rand_uniform({8, 3, 64, 64}, 0.0f, 1.0f, rng);
  Tensor target = Tensor::rand_uniform({8, 8, 8}, 0.0f, 1.0f, rng);
  Adam adam(model.params(), AdamConfig{});
  for (auto _ : state) {
    adam.zero_grad();
    LossReport loss = overall_loss(model.forward_single(x, true), target);
    loss.total.backward();
    adam.step(1e-4f);
    benchmark::DoNotOptimize(loss.overall);
  }
}
BENCHMARK(BM_model_train_step)->Unit(benchmark::kMillisecond);

}  // namespace

int main(int argc, char** argv) {
  openblas_set_num_threads(1);
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
