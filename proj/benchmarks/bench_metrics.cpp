#include <benchmark/benchmark.h>

#include "storm/metrics.hpp"
#include "storm/tom.hpp"

namespace {

using namespace storm::metrics;
using storm::Rng;

ModelPoints make_cloud(int n) {
  Rng rng(7);
  std::vector<std::array<double, 3>> pts;
  for (int i = 0; i < n; ++i) pts.push_back({rng.normal(0, 1), rng.normal(0, 1), rng.normal(0, 1)});
  return ModelPoints::from_points(std::move(pts));
}

Pose make_pose(Rng& rng) {
  Pose p;
  p.rotation = storm::geometry::look_at_rotation(storm::tom::random_direction(rng));
  for (auto& v : p.translation) v = rng.normal(0, 1);
  return p;
}

void BM_Add(benchmark::State& state) {
  const auto cloud = make_cloud(static_cast<int>(state.range(0)));
  Rng rng(3);
  const Pose est = make_pose(rng), gt = make_pose(rng);
  for (auto _ : state) {
    const double v = add(est, gt, cloud);
    benchmark::DoNotOptimize(v);
  }
}

void BM_AddS(benchmark::State& state) {
  const auto cloud = make_cloud(static_cast<int>(state.range(0)));
  Rng rng(4);
  const Pose est = make_pose(rng), gt = make_pose(rng);
  for (auto _ : state) {
    const double v = add_s(est, gt, cloud);
    benchmark::DoNotOptimize(v);
  }
}

}  // namespace

BENCHMARK(BM_Add)->Arg(128)->Arg(1024);
BENCHMARK(BM_AddS)->Arg(128)->Arg(512);

BENCHMARK_MAIN();
