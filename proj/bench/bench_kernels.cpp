#include <random>
#include <vector>

#include <benchmark/benchmark.h>
#include <omp.h>

#include "phyvid/dynsim.hpp"
#include "phyvid/kernels.hpp"

using namespace phyvid;

namespace {

struct Batch {
  SceneAssets assets;
  std::vector<Image> frames;
  std::vector<Point2> coords;
  std::vector<kernels::BatchItem> items;
  kernels::TargetStats stats;
};

// 64x64 frames with two 16-pixel sprites at random in-frame positions; the
// model coordinates are perturbed so the gradients are non-trivial.
Batch make_batch(int n) {
  Batch b;
  b.assets = make_assets(64, 16, 2, 11);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> pos(10.0, 54.0);
  std::normal_distribution<double> jitter(0.0, 0.3);
  const std::vector<FrameTransform> identity(2, FrameTransform::identity());
  for (int i = 0; i < n; ++i) {
    const Point2 c[2] = {{pos(rng), pos(rng)}, {pos(rng), pos(rng)}};
    b.frames.push_back(render(c, b.assets, identity));
    b.items.push_back({i, 2 * i});
    for (const Point2& p : c) b.coords.push_back({p.x + jitter(rng), p.y + jitter(rng)});
  }
  b.stats = kernels::TargetStats::build(b.frames, b.items);
  return b;
}

void BM_Reference(benchmark::State& state) {
  const Batch b = make_batch(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(kernels::reference::loss_grad(b.frames, b.items, b.coords, b.assets));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_Windowed(benchmark::State& state) {
  const Batch b = make_batch(static_cast<int>(state.range(0)));
  omp_set_num_threads(static_cast<int>(state.range(1)));
  for (auto _ : state)
    benchmark::DoNotOptimize(kernels::loss_grad(b.frames, b.items, b.coords, b.stats, b.assets));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

}  // namespace

BENCHMARK(BM_Reference)->Arg(500)->Arg(1500)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Windowed)
    ->ArgsProduct({{500, 1500}, {1, 2, 4}})
    ->ArgNames({"frames", "threads"})
    ->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
