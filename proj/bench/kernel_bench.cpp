// Copyright (c) 2026, the memsave authors
// SPDX-License-Identifier: Apache-2.0
//
// Serial reference vs OpenMP kernels on the probe geometry (4, 8, 32, 32).

#include <benchmark/benchmark.h>

#include <vector>

#include "memsave/kernels.hpp"
#include "memsave/rng.hpp"

namespace {

using namespace memsave;

std::vector<float> random_buffer(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.next_normal());
  return v;
}

kernels::Conv2dGeometry probe_geometry(std::int64_t channels) {
  kernels::Conv2dGeometry g;
  g.batch = 4;
  g.in_channels = channels;
  g.in_h = 32;
  g.in_w = 32;
  g.out_channels = channels;
  g.kernel_h = 3;
  g.kernel_w = 3;
  g.padding = 1;
  return g;
}

template <kernels::Backend B>
void BM_Conv2dForward(benchmark::State& state) {
  const auto g = probe_geometry(state.range(0));
  const auto x = random_buffer(g.input_numel(), 1);
  const auto w = random_buffer(g.weight_numel(), 2);
  std::vector<float> y(g.output_numel());
  for (auto _ : state) {
    if constexpr (B == kernels::Backend::Serial) {
      kernels::serial::conv2d_forward(g, std::span<const float>(x), std::span<const float>(w), std::span<float>(y));
    } else {
      kernels::parallel::conv2d_forward(g, std::span<const float>(x), std::span<const float>(w), std::span<float>(y));
    }
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * g.output_numel());
}

template <kernels::Backend B>
void BM_Conv2dBackwardInput(benchmark::State& state) {
  const auto g = probe_geometry(state.range(0));
  const auto gy = random_buffer(g.output_numel(), 3);
  const auto w = random_buffer(g.weight_numel(), 4);
  std::vector<float> gx(g.input_numel());
  for (auto _ : state) {
    if constexpr (B == kernels::Backend::Serial) {
      kernels::serial::conv2d_backward_input(g, std::span<const float>(gy), std::span<const float>(w),
                                             std::span<float>(gx));
    } else {
      kernels::parallel::conv2d_backward_input(g, std::span<const float>(gy), std::span<const float>(w),
                                               std::span<float>(gx));
    }
    benchmark::DoNotOptimize(gx.data());
  }
}

template <kernels::Backend B>
void BM_Conv2dBackwardWeight(benchmark::State& state) {
  const auto g = probe_geometry(state.range(0));
  const auto x = random_buffer(g.input_numel(), 5);
  const auto gy = random_buffer(g.output_numel(), 6);
  std::vector<float> gw(g.weight_numel());
  for (auto _ : state) {
    if constexpr (B == kernels::Backend::Serial) {
      kernels::serial::conv2d_backward_weight(g, std::span<const float>(x), std::span<const float>(gy),
                                              std::span<float>(gw));
    } else {
      kernels::parallel::conv2d_backward_weight(g, std::span<const float>(x), std::span<const float>(gy),
                                                std::span<float>(gw));
    }
    benchmark::DoNotOptimize(gw.data());
  }
}

template <kernels::Backend B>
void BM_Matmul(benchmark::State& state) {
  const std::int64_t n = state.range(0);
  kernels::MatmulGeometry g{.batch = 1, .m = 512, .k = n, .n = n, .transpose_b = true};
  const auto a = random_buffer(static_cast<std::size_t>(g.m * g.k), 7);
  const auto b = random_buffer(static_cast<std::size_t>(g.k * g.n), 8);
  std::vector<float> c(static_cast<std::size_t>(g.m * g.n));
  for (auto _ : state) {
    if constexpr (B == kernels::Backend::Serial) {
      kernels::serial::matmul(g, std::span<const float>(a), std::span<const float>(b), std::span<float>(c));
    } else {
      kernels::parallel::matmul(g, std::span<const float>(a), std::span<const float>(b), std::span<float>(c));
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * g.m * g.n * g.k);
}

constexpr auto kSerial = kernels::Backend::Serial;
constexpr auto kParallel = kernels::Backend::Parallel;

BENCHMARK(BM_Conv2dForward<kSerial>)->Arg(8)->Arg(32);
BENCHMARK(BM_Conv2dForward<kParallel>)->Arg(8)->Arg(32);
BENCHMARK(BM_Conv2dBackwardInput<kSerial>)->Arg(8)->Arg(32);
BENCHMARK(BM_Conv2dBackwardInput<kParallel>)->Arg(8)->Arg(32);
BENCHMARK(BM_Conv2dBackwardWeight<kSerial>)->Arg(8)->Arg(32);
BENCHMARK(BM_Conv2dBackwardWeight<kParallel>)->Arg(8)->Arg(32);
BENCHMARK(BM_Matmul<kSerial>)->Arg(64)->Arg(256);
BENCHMARK(BM_Matmul<kParallel>)->Arg(64)->Arg(256);

}  // namespace

BENCHMARK_MAIN();
