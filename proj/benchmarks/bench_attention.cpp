#include <benchmark/benchmark.h>

#include "storm/attention.hpp"
#include "storm/hsfa.hpp"

namespace {

using storm::AttentionParams;
using storm::FeatureMap;
using storm::Mat;
using storm::Rng;

void BM_SelfAttentionForward(benchmark::State& state) {
  const int P = static_cast<int>(state.range(0));
  const int C = static_cast<int>(state.range(1));
  Rng rng(1);
  const auto p = AttentionParams<float>::init(C, 1, rng);
  const FeatureMap<float> x(storm::random_normal<float>(P, C, 0, 1, rng), 1, P);
  for (auto _ : state) {
    auto y = storm::self_attention(x, p);
    benchmark::DoNotOptimize(y.data.data.data());
  }
  state.SetItemsProcessed(state.iterations() * P);
}

void BM_AttentionForwardBackward(benchmark::State& state) {
  const int P = static_cast<int>(state.range(0));
  const int C = static_cast<int>(state.range(1));
  Rng rng(2);
  const auto p = AttentionParams<float>::init(C, 1, rng);
  const auto x = storm::random_normal<float>(P, C, 0, 1, rng);
  for (auto _ : state) {
    storm::Tape<float> t;
    storm::LeafBinding<float> lb;
    const auto bp = bind_attention(t, lb, p);
    const int out = storm::ops::attention_block(t, t.leaf(x), t.leaf(x), bp);
    t.backward(out, Mat<float>::full(P, C, 1.0f));
    benchmark::DoNotOptimize(t.grad(lb.ids[0]).data.data());
  }
}

void BM_HsfaForward(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(3);
  storm::hsfa::HsfaConfig<float> cfg;
  cfg.n_layers = n;
  cfg.view_count = 2;
  cfg.channels = 32;
  cfg.text_dim = 16;
  const auto model = storm::hsfa::HsfaModel<float>::init(cfg, 5);
  const FeatureMap<float> query(storm::random_normal<float>(196, 32, 0, 1, rng), 14, 14);
  const std::vector<FeatureMap<float>> refs{
      FeatureMap<float>(storm::random_normal<float>(36, 32, 0, 1, rng), 6, 6),
      FeatureMap<float>(storm::random_normal<float>(36, 32, 0, 1, rng), 6, 6)};
  for (auto _ : state) {
    auto fwd = storm::hsfa::hsfa_forward(model, query, refs);
    benchmark::DoNotOptimize(fwd.heatmap.values.data.data());
  }
}

}  // namespace

BENCHMARK(BM_SelfAttentionForward)->Args({64, 32})->Args({196, 32})->Args({196, 64});
BENCHMARK(BM_AttentionForwardBackward)->Args({64, 32})->Args({196, 32});
BENCHMARK(BM_HsfaForward)->Arg(1)->Arg(3);

BENCHMARK_MAIN();
