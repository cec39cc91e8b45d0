#include <benchmark/benchmark.h>

#include "storm/tom.hpp"

namespace {

using storm::Rng;
using namespace storm::tom;

void BM_Verify(benchmark::State& state) {
  const int layers = static_cast<int>(state.range(0));
  Rng rng(1);
  const auto model = TomModel<float>::init(32, layers, 3);
  const CropFeature<float> a{storm::random_normal<float>(36, 32, 0, 1, rng), 0, 0};
  const CropFeature<float> b{storm::random_normal<float>(36, 32, 0, 1, rng), 0, 1};
  for (auto _ : state) {
    const double s = verify(model, a, b);
    benchmark::DoNotOptimize(s);
  }
}

void BM_CosineVerify(benchmark::State& state) {
  Rng rng(2);
  const CropFeature<float> a{storm::random_normal<float>(36, 32, 0, 1, rng), 0, 0};
  const CropFeature<float> b{storm::random_normal<float>(36, 32, 0, 1, rng), 0, 1};
  for (auto _ : state) {
    const double s = cosine_verify(a, b);
    benchmark::DoNotOptimize(s);
  }
}

void BM_DatasetPair(benchmark::State& state) {
  TrackingDatasetConfig cfg;
  cfg.pair_count = 1 << 20;
  TrackingDatasetGenerator<float> gen(cfg);
  int i = 0;
  for (auto _ : state) {
    auto p = gen.pair(i++ & ((1 << 20) - 1));
    benchmark::DoNotOptimize(p.candidate.data.data());
  }
}

}  // namespace

BENCHMARK(BM_Verify)->Arg(0)->Arg(1)->Arg(2);
BENCHMARK(BM_CosineVerify);
BENCHMARK(BM_DatasetPair);

BENCHMARK_MAIN();
