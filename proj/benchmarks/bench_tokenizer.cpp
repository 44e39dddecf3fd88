#include <random>

#include <benchmark/benchmark.h>

#include "loctex/tokenizer.hpp"

namespace {

const std::vector<std::string>& corpus() {
  static const std::vector<std::string> c = [] {
    const std::vector<std::string> words{"in",      "this",  "image", "we",     "can", "see",   "a",     "person",
                                         "holding", "an",    "umbrella", "on", "the", "left", "right", "there",
                                         "are",     "trees", "and",   "buildings", "sky", "with", "clouds", "road"};
    std::mt19937_64 rng(0);
    std::uniform_int_distribution<std::size_t> pick(0, words.size() - 1);
    std::vector<std::string> out;
    for (int i = 0; i < 2000; ++i) {
      std::string caption;
      for (int w = 0; w < 20; ++w) caption += (w ? " " : "") + words[pick(rng)];
      out.push_back(caption);
    }
    return out;
  }();
  return c;
}

void BM_TrainBpe(benchmark::State& state) {
  const std::span<const std::string> sub(corpus().data(), static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(loctex::train_bpe(sub, 400));
}
BENCHMARK(BM_TrainBpe)->Arg(100)->Arg(1000)->Unit(benchmark::kMillisecond);

void BM_Encode(benchmark::State& state) {
  const auto vocab = loctex::train_bpe(corpus(), 400);
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(loctex::encode(corpus()[i++ % corpus().size()], vocab));
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_Encode);

}  // namespace
