#include <random>

#include <benchmark/benchmark.h>

#include "loctex/trace_render.hpp"

namespace {

std::vector<loctex::TracePoint> random_walk(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> step(0.0, 0.03);
  std::vector<loctex::TracePoint> pts;
  double x = 0.5, y = 0.5;
  for (std::size_t i = 0; i < n; ++i) {
    x = std::clamp(x + step(rng), 0.0, 1.0);
    y = std::clamp(y + step(rng), 0.0, 1.0);
    pts.push_back({x, y, 0.1 * static_cast<double>(i)});
  }
  return pts;
}

void BM_RasterizeTrace(benchmark::State& state) {
  const auto pts = random_walk(static_cast<std::size_t>(state.range(0)), 1);
  const int res = static_cast<int>(state.range(1));
  for (auto _ : state) benchmark::DoNotOptimize(loctex::rasterize_trace(pts, res, 0));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(pts.size()));
}
BENCHMARK(BM_RasterizeTrace)->ArgsProduct({{16, 256}, {7, 14, 56}});

void BM_RasterizeDilated(benchmark::State& state) {
  const auto pts = random_walk(256, 2);
  for (auto _ : state) benchmark::DoNotOptimize(loctex::rasterize_trace(pts, 14, static_cast<int>(state.range(0))));
}
BENCHMARK(BM_RasterizeDilated)->Arg(0)->Arg(1)->Arg(2);

}  // namespace
