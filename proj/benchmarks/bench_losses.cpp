#include <benchmark/benchmark.h>
#include <torch/torch.h>

#include "loctex/losses.hpp"

namespace {

void BM_ContrastiveLoss(benchmark::State& state) {
  torch::manual_seed(0);
  const auto n = state.range(0);
  auto v = torch::randn({n, 128}, torch::requires_grad());
  auto t = torch::randn({n, 128}, torch::requires_grad());
  const loctex::LossConfig cfg;
  for (auto _ : state) {
    auto loss = loctex::contrastive_loss(v, t, cfg);
    loss.backward();
    benchmark::DoNotOptimize(loss);
  }
}
BENCHMARK(BM_ContrastiveLoss)->Arg(32)->Arg(256);

void BM_AttentionLocalization(benchmark::State& state) {
  torch::manual_seed(0);
  const auto n = state.range(0), res = state.range(1);
  const int64_t length = 60, width = 128;
  auto zt = torch::randn({n, width, length}, torch::requires_grad());
  auto zv = torch::randn({n, width, res, res}, torch::requires_grad());
  const auto target = (torch::rand({n, length, res, res}) > 0.9).to(torch::kFloat);
  const auto mask = torch::ones({n, length});
  const loctex::LossConfig cfg;
  for (auto _ : state) {
    auto loss = loctex::localization_loss(loctex::attention_map(zt, zv), target, mask, cfg);
    loss.backward();
    benchmark::DoNotOptimize(loss);
  }
}
BENCHMARK(BM_AttentionLocalization)->Args({32, 7})->Args({32, 14})->Unit(benchmark::kMillisecond);

}  // namespace
