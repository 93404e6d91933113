// Serial reference kernels against the OpenMP kernels on decoder-sized shapes.
//
//   ./build/bench/sfnet_bench --benchmark_filter=Conv

#include <benchmark/benchmark.h>

#include <random>
#include <span>
#include <vector>

#include "sfnet/kernels.hpp"

namespace {

using sfnet::kernels::ConvGeometry;
using sfnet::kernels::SampleGeometry;

std::vector<double> random_buffer(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> v(count);
  for (double& x : v) x = dist(rng);
  return v;
}

ConvGeometry conv_geometry(const benchmark::State& state) {
  ConvGeometry g;
  g.n = 1;
  g.in_c = static_cast<int>(state.range(0));
  g.out_c = static_cast<int>(state.range(0));
  g.in_h = static_cast<int>(state.range(1));
  g.in_w = static_cast<int>(state.range(1));
  g.k = static_cast<int>(state.range(2));
  g.pad = g.k / 2;
  return g;
}

struct ConvBuffers {
  std::vector<double> input;
  std::vector<double> weight;
  std::vector<double> bias;
  std::vector<double> out;

  explicit ConvBuffers(const ConvGeometry& g)
      : input(random_buffer(static_cast<std::size_t>(g.n) * g.in_c * g.in_h * g.in_w, 1)),
        weight(random_buffer(static_cast<std::size_t>(g.out_c) * g.patch(), 2)),
        bias(random_buffer(static_cast<std::size_t>(g.out_c), 3)),
        out(static_cast<std::size_t>(g.n) * g.out_c * g.out_h() * g.out_w()) {}
};

void set_conv_counters(benchmark::State& state, const ConvGeometry& g) {
  const double flops = 2.0 * g.n * g.out_c * g.out_h() * g.out_w() * static_cast<double>(g.patch());
  state.counters["FLOP/s"] =
      benchmark::Counter(flops, benchmark::Counter::kIsIterationInvariantRate);
}

template <auto Kernel>
void BM_ConvForward(benchmark::State& state) {
  const ConvGeometry g = conv_geometry(state);
  ConvBuffers b(g);
  for (auto _ : state) {
    Kernel(g, b.input, b.weight, b.bias, b.out);
    benchmark::DoNotOptimize(b.out.data());
    benchmark::ClobberMemory();
  }
  set_conv_counters(state, g);
}

template <auto Kernel>
void BM_ConvBackwardInput(benchmark::State& state) {
  const ConvGeometry g = conv_geometry(state);
  ConvBuffers b(g);
  std::vector<double> grad_out = random_buffer(b.out.size(), 4);
  std::vector<double> grad_in(b.input.size());
  for (auto _ : state) {
    Kernel(g, grad_out, b.weight, grad_in);
    benchmark::DoNotOptimize(grad_in.data());
    benchmark::ClobberMemory();
  }
  set_conv_counters(state, g);
}

template <auto Kernel>
void BM_ConvBackwardParams(benchmark::State& state) {
  const ConvGeometry g = conv_geometry(state);
  ConvBuffers b(g);
  std::vector<double> grad_out = random_buffer(b.out.size(), 4);
  std::vector<double> grad_w(b.weight.size());
  std::vector<double> grad_b(b.bias.size());
  for (auto _ : state) {
    Kernel(g, b.input, grad_out, grad_w, grad_b);
    benchmark::DoNotOptimize(grad_w.data());
    benchmark::ClobberMemory();
  }
  set_conv_counters(state, g);
}

struct SampleBuffers {
  SampleGeometry g;
  std::vector<double> source;
  std::vector<double> coords;
  std::vector<double> out;

  explicit SampleBuffers(const benchmark::State& state) {
    const int c = static_cast<int>(state.range(0));
    const int src = static_cast<int>(state.range(1));
    g = SampleGeometry{1, c, src, src, 2 * src, 2 * src};
    source = random_buffer(static_cast<std::size_t>(c) * src * src, 5);
    const std::size_t plane = static_cast<std::size_t>(g.dst_h) * g.dst_w;
    coords.resize(2 * plane);
    std::vector<double> jitter = random_buffer(2 * plane, 6);
    for (int i = 0; i < g.dst_h; ++i) {
      for (int j = 0; j < g.dst_w; ++j) {
        const std::size_t p = static_cast<std::size_t>(i) * g.dst_w + j;
        coords[p] = i / 2.0 + jitter[p];
        coords[plane + p] = j / 2.0 + jitter[plane + p];
      }
    }
    out.resize(static_cast<std::size_t>(c) * plane);
  }
};

template <auto Kernel>
void BM_BilinearForward(benchmark::State& state) {
  SampleBuffers b(state);
  for (auto _ : state) {
    Kernel(b.g, b.source, b.coords, b.out);
    benchmark::DoNotOptimize(b.out.data());
    benchmark::ClobberMemory();
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(b.out.size()));
}

template <auto Kernel>
void BM_BilinearBackward(benchmark::State& state) {
  SampleBuffers b(state);
  std::vector<double> grad_out = random_buffer(b.out.size(), 7);
  std::vector<double> grad_source(b.source.size());
  std::vector<double> grad_coords(b.coords.size());
  for (auto _ : state) {
    Kernel(b.g, b.source, b.coords, grad_out, grad_source, grad_coords);
    benchmark::DoNotOptimize(grad_source.data());
    benchmark::DoNotOptimize(grad_coords.data());
    benchmark::ClobberMemory();
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(b.out.size()));
}

void conv_shapes(benchmark::internal::Benchmark* b) {
  b->ArgNames({"ch", "hw", "k"});
  b->Args({64, 16, 1});
  b->Args({64, 16, 3});
  b->Args({64, 32, 3});
  b->Args({128, 16, 3});
  b->Unit(benchmark::kMillisecond);
}

void sample_shapes(benchmark::internal::Benchmark* b) {
  b->ArgNames({"ch", "src"});
  b->Args({64, 8});
  b->Args({64, 16});
  b->Args({64, 32});
  b->Unit(benchmark::kMicrosecond);
}

namespace k = sfnet::kernels;

BENCHMARK(BM_ConvForward<k::ref::conv2d_forward>)->Name("ConvForward/ref")->Apply(conv_shapes);
BENCHMARK(BM_ConvForward<k::conv2d_forward>)->Name("ConvForward/omp")->Apply(conv_shapes);
BENCHMARK(BM_ConvBackwardInput<k::ref::conv2d_backward_input>)
    ->Name("ConvBackwardInput/ref")
    ->Apply(conv_shapes);
BENCHMARK(BM_ConvBackwardInput<k::conv2d_backward_input>)
    ->Name("ConvBackwardInput/omp")
    ->Apply(conv_shapes);
BENCHMARK(BM_ConvBackwardParams<k::ref::conv2d_backward_params>)
    ->Name("ConvBackwardParams/ref")
    ->Apply(conv_shapes);
BENCHMARK(BM_ConvBackwardParams<k::conv2d_backward_params>)
    ->Name("ConvBackwardParams/omp")
    ->Apply(conv_shapes);
BENCHMARK(BM_BilinearForward<k::ref::bilinear_forward>)
    ->Name("BilinearForward/ref")
    ->Apply(sample_shapes);
BENCHMARK(BM_BilinearForward<k::bilinear_forward>)
    ->Name("BilinearForward/omp")
    ->Apply(sample_shapes);
BENCHMARK(BM_BilinearBackward<k::ref::bilinear_backward>)
    ->Name("BilinearBackward/ref")
    ->Apply(sample_shapes);
BENCHMARK(BM_BilinearBackward<k::bilinear_backward>)
    ->Name("BilinearBackward/omp")
    ->Apply(sample_shapes);

}  // namespace

BENCHMARK_MAIN();
