#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "iqa/attack.hpp"
#include "iqa/kernels.hpp"
#include "iqa/synth.hpp"
#include "iqa/weight_set.hpp"

using namespace iqa;

namespace {

std::vector<double> random_buffer(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

kernels::ConvGeometry conv_geometry(std::size_t size) {
  kernels::ConvGeometry g;
  g.in_h = g.in_w = size;
  g.in_c = 8;
  g.out_c = 16;
  g.k_h = g.k_w = 5;
  g.pad_h = g.pad_w = 2;
  return g;
}

using ConvFn = void (*)(const kernels::ConvGeometry&, const double*, const double*, double*);

template <ConvFn F>
void conv_forward(benchmark::State& state) {
  const auto g = conv_geometry(static_cast<std::size_t>(state.range(0)));
  const auto in = random_buffer(g.in_h * g.in_w * g.in_c, 1);
  const auto k = random_buffer(g.out_c * g.in_c * g.k_h * g.k_w, 2);
  std::vector<double> out(g.out_h() * g.out_w() * g.out_c);
  for (auto _ : state) {
    F(g, in.data(), k.data(), out.data());
    benchmark::DoNotOptimize(out.data());
  }
}

template <ConvFn F>
void conv_backward_input(benchmark::State& state) {
  const auto g = conv_geometry(static_cast<std::size_t>(state.range(0)));
  const auto dout = random_buffer(g.out_h() * g.out_w() * g.out_c, 3);
  const auto k = random_buffer(g.out_c * g.in_c * g.k_h * g.k_w, 4);
  std::vector<double> din(g.in_h * g.in_w * g.in_c);
  for (auto _ : state) {
    F(g, dout.data(), k.data(), din.data());
    benchmark::DoNotOptimize(din.data());
  }
}

template <ConvFn F>
void conv_backward_kernel(benchmark::State& state) {
  const auto g = conv_geometry(static_cast<std::size_t>(state.range(0)));
  const auto in = random_buffer(g.in_h * g.in_w * g.in_c, 5);
  const auto dout = random_buffer(g.out_h() * g.out_w() * g.out_c, 6);
  std::vector<double> dk(g.out_c * g.in_c * g.k_h * g.k_w);
  for (auto _ : state) {
    F(g, in.data(), dout.data(), dk.data());
    benchmark::DoNotOptimize(dk.data());
  }
}

using FilterFn = void (*)(const kernels::FilterGeometry&, std::span<const double>, const double*, double*);

template <FilterFn F>
void filter_forward(benchmark::State& state) {
  kernels::FilterGeometry g;
  g.in_h = g.in_w = static_cast<std::size_t>(state.range(0));
  g.channels = 5;
  g.axis = 1;
  g.taps = 11;
  const auto taps = random_buffer(g.taps, 7);
  const auto in = random_buffer(g.in_h * g.in_w * g.channels, 8);
  std::vector<double> out(g.out_h() * g.out_w() * g.channels);
  for (auto _ : state) {
    F(g, taps, in.data(), out.data());
    benchmark::DoNotOptimize(out.data());
  }
}

void attack_candidate(benchmark::State& state) {
  const WeightSet ws(IQA_WEIGHTS_DIR);
  const auto model = ws.model(static_cast<ModelKind>(state.range(0)));
  const auto measure = fidelity::FidelityMeasure::make_neg_ssim();
  const auto x0 = synth::pristine(3, 64, 64);
  attack::AttackConfig cfg;
  cfg.lambdas = {1.0};
  cfg.max_iterations = 10;
  for (auto _ : state) {
    auto c = attack::run_candidate(x0, 1.0, 1, cfg, *model, measure);
    benchmark::DoNotOptimize(c.fidelity);
  }
  state.SetLabel(std::string(model->id()) + ", 10 iterations on 64x64");
}

}  // namespace

BENCHMARK(conv_forward<kernels::conv2d_forward>)->Name("conv_forward/parallel")->Arg(32)->Arg(64)->Arg(128);
BENCHMARK(conv_forward<kernels::reference::conv2d_forward>)->Name("conv_forward/reference")->Arg(32)->Arg(64)->Arg(128);
BENCHMARK(conv_backward_input<kernels::conv2d_backward_input>)->Name("conv_backward_input/parallel")->Arg(64);
BENCHMARK(conv_backward_input<kernels::reference::conv2d_backward_input>)->Name("conv_backward_input/reference")->Arg(64);
BENCHMARK(conv_backward_kernel<kernels::conv2d_backward_kernel>)->Name("conv_backward_kernel/parallel")->Arg(64);
BENCHMARK(conv_backward_kernel<kernels::reference::conv2d_backward_kernel>)->Name("conv_backward_kernel/reference")->Arg(64);
BENCHMARK(filter_forward<kernels::filter1d_forward>)->Name("filter_forward/parallel")->Arg(64)->Arg(256);
BENCHMARK(filter_forward<kernels::reference::filter1d_forward>)->Name("filter_forward/reference")->Arg(64)->Arg(256);
BENCHMARK(attack_candidate)->Arg(static_cast<int>(ModelKind::nss))->Arg(static_cast<int>(ModelKind::codebook))
    ->Arg(static_cast<int>(ModelKind::cnn))->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
