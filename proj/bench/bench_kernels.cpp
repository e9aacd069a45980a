#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include <omp.h>

#include "bevtrack/metrics.hpp"
#include "bevtrack/nn/kernels.hpp"

using namespace bevtrack;

namespace {

std::vector<double> random_values(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

// Encoder-like layer on a 1280x384 input downsampled by 2: 16 -> 32 channels.
nn::ConvShape layer_shape(const benchmark::State& state) {
  nn::ConvShape s;
  s.in_channels = static_cast<int>(state.range(0));
  s.out_channels = 2 * s.in_channels;
  s.in_rows = 192;
  s.in_cols = 640;
  return s;
}

struct ConvBuffers {
  std::vector<double> input, weight, bias, output, grad_output, grad_input, grad_weight, grad_bias;

  explicit ConvBuffers(const nn::ConvShape& s)
      : input(random_values(s.input_size(), 1)),
        weight(random_values(s.weight_size(), 2)),
        bias(random_values(static_cast<std::size_t>(s.out_channels), 3)),
        output(s.output_size()),
        grad_output(random_values(s.output_size(), 4)),
        grad_input(s.input_size()),
        grad_weight(s.weight_size()),
        grad_bias(static_cast<std::size_t>(s.out_channels)) {}
};

template <auto Forward>
void conv_forward(benchmark::State& state) {
  const nn::ConvShape s = layer_shape(state);
  ConvBuffers b(s);
  for (auto _ : state) {
    Forward(s, b.input, b.weight, b.bias, b.output);
    benchmark::DoNotOptimize(b.output.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(s.output_size() * s.in_channels * 9));
}

template <auto BackwardInput, auto BackwardParams>
void conv_backward(benchmark::State& state) {
  const nn::ConvShape s = layer_shape(state);
  ConvBuffers b(s);
  for (auto _ : state) {
    BackwardInput(s, b.grad_output, b.weight, b.grad_input);
    BackwardParams(s, b.input, b.grad_output, b.grad_weight, b.grad_bias);
    benchmark::DoNotOptimize(b.grad_input.data());
    benchmark::DoNotOptimize(b.grad_weight.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(2 * s.output_size() * s.in_channels * 9));
}

template <bool Parallel>
void depth_accumulation(benchmark::State& state) {
  const int rows = static_cast<int>(state.range(0)), cols = 4 * rows;
  GridD pred(1, rows, cols);
  pred.data() = random_values(pred.size(), 5, 1.0, 90.0);
  SparseDepthMap gt(rows, cols, 4);
  gt.values.data() = random_values(gt.values.size(), 6, 1.0, 90.0);
  const auto keep = random_values(gt.valid.size(), 7, 0.0, 1.0);
  for (std::size_t i = 0; i < keep.size(); ++i) gt.valid.data()[i] = keep[i] < 0.3;
  for (auto _ : state) {
    const DepthAccumulator acc =
        Parallel ? accumulate_depth(pred, gt, nullptr) : reference::accumulate_depth(pred, gt, nullptr);
    benchmark::DoNotOptimize(acc);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(pred.size()));
}

}  // namespace

BENCHMARK(conv_forward<nn::reference::conv2d_forward>)->Name("conv_forward/reference")->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);
BENCHMARK(conv_forward<nn::kernels::conv2d_forward>)->Name("conv_forward/openmp")->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(conv_backward<nn::reference::conv2d_backward_input, nn::reference::conv2d_backward_params>)
    ->Name("conv_backward/reference")->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);
BENCHMARK(conv_backward<nn::kernels::conv2d_backward_input, nn::kernels::conv2d_backward_params>)
    ->Name("conv_backward/openmp")->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(depth_accumulation<false>)->Name("depth_metrics/reference")->Arg(96)->Arg(384)->Unit(benchmark::kMicrosecond);
BENCHMARK(depth_accumulation<true>)->Name("depth_metrics/openmp")->Arg(96)->Arg(384)->Unit(benchmark::kMicrosecond)->UseRealTime();

int main(int argc, char** argv) {
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::AddCustomContext("omp_threads", std::to_string(omp_get_max_threads()));
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
