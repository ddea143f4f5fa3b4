#include <cmath>
#include <random>

#include <doctest.h>
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

Batch make_batch(int n, std::uint64_t seed) {
  Batch b;
  b.assets = make_assets(32, 8, 2, seed);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> pos(4.0, 28.0);
  std::normal_distribution<double> jitter(0.0, 0.4);
  const std::vector<FrameTransform> identity(2, FrameTransform::identity());
  for (int i = 0; i < n; ++i) {
    const Point2 c[2] = {{pos(rng), pos(rng)}, {pos(rng), pos(rng)}};
    b.frames.push_back(render(c, b.assets, identity));
    b.items.push_back({i, 2 * i});
    for (const Point2& p : c) b.coords.push_back({p.x + jitter(rng), p.y + jitter(rng)});
  }
  // Some frames appear twice in the batch, as overlapping windows do in training.
  for (int i = 0; i < n / 4; ++i) {
    b.items.push_back({i, static_cast<int>(b.coords.size())});
    b.coords.push_back(b.coords[2 * i]);
    b.coords.push_back(b.coords[2 * i + 1]);
  }
  b.stats = kernels::TargetStats::build(b.frames, b.items);
  return b;
}

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

bool identical(const kernels::BatchResult& a, const kernels::BatchResult& b) {
  if (a.loss_sum != b.loss_sum || a.d_coords.size() != b.d_coords.size()) return false;
  for (std::size_t i = 0; i < a.d_coords.size(); ++i)
    if (a.d_coords[i].x != b.d_coords[i].x || a.d_coords[i].y != b.d_coords[i].y) return false;
  if (a.d_assets.background != b.d_assets.background) return false;
  return a.d_assets.intensity == b.d_assets.intensity && a.d_assets.alpha_logits == b.d_assets.alpha_logits;
}

}  // namespace

TEST_SUITE("kernels") {

TEST_CASE("windowed kernel matches the full-frame reference") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const Batch b = make_batch(40, seed);
    const auto ref = kernels::reference::loss_grad(b.frames, b.items, b.coords, b.assets);
    const auto fast = kernels::loss_grad(b.frames, b.items, b.coords, b.stats, b.assets);
    CHECK(fast.loss_sum == doctest::Approx(ref.loss_sum).epsilon(1e-10));
    double coord_diff = 0.0;
    for (std::size_t i = 0; i < ref.d_coords.size(); ++i)
      coord_diff = std::max({coord_diff, std::abs(ref.d_coords[i].x - fast.d_coords[i].x),
                             std::abs(ref.d_coords[i].y - fast.d_coords[i].y)});
    CHECK(coord_diff < 1e-9);
    CHECK(max_diff(ref.d_assets.background, fast.d_assets.background) < 1e-9);
    for (std::size_t k = 0; k < ref.d_assets.intensity.size(); ++k) {
      CHECK(max_diff(ref.d_assets.intensity[k], fast.d_assets.intensity[k]) < 1e-9);
      CHECK(max_diff(ref.d_assets.alpha_logits[k], fast.d_assets.alpha_logits[k]) < 1e-9);
    }
  }
}

TEST_CASE("results do not depend on the thread count") {
  const Batch b = make_batch(64, 9);
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  const auto one = kernels::loss_grad(b.frames, b.items, b.coords, b.stats, b.assets);
  for (int threads : {2, 4, 7}) {
    omp_set_num_threads(threads);
    CAPTURE(threads);
    CHECK(identical(one, kernels::loss_grad(b.frames, b.items, b.coords, b.stats, b.assets)));
  }
  omp_set_num_threads(saved);
}

TEST_CASE("chunk counts agree closely") {
  const Batch b = make_batch(30, 4);
  const auto base = kernels::loss_grad(b.frames, b.items, b.coords, b.stats, b.assets, 1);
  for (int chunks : {3, 32, 200}) {
    const auto other = kernels::loss_grad(b.frames, b.items, b.coords, b.stats, b.assets, chunks);
    CHECK(other.loss_sum == doctest::Approx(base.loss_sum).epsilon(1e-12));
    CHECK(max_diff(base.d_assets.background, other.d_assets.background) < 1e-12);
  }
}

TEST_CASE("an empty batch contributes nothing") {
  const Batch b = make_batch(3, 5);
  const std::vector<kernels::BatchItem> none;
  const auto stats = kernels::TargetStats::build(b.frames, none);
  const auto r = kernels::loss_grad(b.frames, none, b.coords, stats, b.assets);
  CHECK(r.loss_sum == 0.0);
  for (double g : r.d_assets.background) CHECK(g == 0.0);
}

}  // TEST_SUITE
