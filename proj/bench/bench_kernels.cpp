#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "wmf/kernels.hpp"

namespace k = wmf::kernels;

namespace {

std::vector<float> noise(std::size_t n) {
  std::mt19937 g(7);
  std::uniform_real_distribution<float> u(-1.f, 1.f);
  std::vector<float> v(n);
  for (float& x : v) x = u(g);
  return v;
}

template <bool Parallel>
void conv3x3(benchmark::State& state) {
  const std::int64_t c = state.range(0), hw = state.range(1);
  const k::Conv3x3Dims d{2, c, c, hw, hw};
  const auto x = noise(2 * c * hw * hw), w = noise(c * c * 9), b = noise(c);
  std::vector<float> y(x.size());
  for (auto _ : state) {
    if constexpr (Parallel) k::parallel::conv3x3_forward(x.data(), w.data(), b.data(), y.data(), d);
    else k::serial::conv3x3_forward(x.data(), w.data(), b.data(), y.data(), d);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * c * c * 9 * hw * hw);
}

template <bool Parallel>
void conv3x3_grad_weight(benchmark::State& state) {
  const std::int64_t c = state.range(0), hw = state.range(1);
  const k::Conv3x3Dims d{2, c, c, hw, hw};
  const auto x = noise(2 * c * hw * hw), gy = noise(2 * c * hw * hw);
  std::vector<float> gw(c * c * 9), gb(c);
  for (auto _ : state) {
    if constexpr (Parallel) k::parallel::conv3x3_backward_weight(gy.data(), x.data(), gw.data(), gb.data(), d);
    else k::serial::conv3x3_backward_weight(gy.data(), x.data(), gw.data(), gb.data(), d);
    benchmark::DoNotOptimize(gw.data());
  }
}

template <bool Parallel>
void conv1x1(benchmark::State& state) {
  const std::int64_t c = state.range(0), hw = state.range(1);
  const k::Conv1x1Dims d{2, c, 2 * c, hw * hw};
  const auto x = noise(2 * c * hw * hw), w = noise(2 * c * c), b = noise(2 * c);
  std::vector<float> y(2 * 2 * c * hw * hw);
  for (auto _ : state) {
    if constexpr (Parallel) k::parallel::conv1x1_forward(x.data(), w.data(), b.data(), y.data(), d);
    else k::serial::conv1x1_forward(x.data(), w.data(), b.data(), y.data(), d);
    benchmark::DoNotOptimize(y.data());
  }
}

template <bool Parallel>
void depthwise(benchmark::State& state) {
  const std::int64_t c = state.range(0), hw = state.range(1);
  const k::DepthwiseDims d{2, c, hw, hw};
  const auto x = noise(2 * c * hw * hw), w = noise(c * 9), b = noise(c);
  std::vector<float> y(x.size());
  for (auto _ : state) {
    if constexpr (Parallel) k::parallel::dconv3x3_forward(x.data(), w.data(), b.data(), y.data(), d);
    else k::serial::dconv3x3_forward(x.data(), w.data(), b.data(), y.data(), d);
    benchmark::DoNotOptimize(y.data());
  }
}

// Channel attention scores: (d x hw) * (hw x d)^T per head.
template <bool Parallel>
void gemm_scores(benchmark::State& state) {
  const std::int64_t dh = state.range(0), hw = state.range(1);
  const k::GemmDims d{4, dh, dh, hw * hw, false, true};
  const auto a = noise(4 * dh * hw * hw), b = noise(4 * dh * hw * hw);
  std::vector<float> c(4 * dh * dh);
  for (auto _ : state) {
    if constexpr (Parallel) k::parallel::gemm(a.data(), b.data(), c.data(), d, false);
    else k::serial::gemm(a.data(), b.data(), c.data(), d, false);
    benchmark::DoNotOptimize(c.data());
  }
}

}  // namespace

#define WMF_PAIR(fn, ...)                              \
  BENCHMARK(fn<false>)->Name(#fn "/serial")->Args(__VA_ARGS__); \
  BENCHMARK(fn<true>)->Name(#fn "/parallel")->Args(__VA_ARGS__);

WMF_PAIR(conv3x3, {16, 64})
WMF_PAIR(conv3x3, {64, 16})
WMF_PAIR(conv3x3_grad_weight, {16, 64})
WMF_PAIR(conv1x1, {32, 64})
WMF_PAIR(depthwise, {64, 64})
WMF_PAIR(gemm_scores, {16, 64})

BENCHMARK_MAIN();
