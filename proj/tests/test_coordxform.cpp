#include <cmath>
#include <random>

#include <doctest.h>

#include "phyvid/coordxform.hpp"

using namespace phyvid;

TEST_SUITE("coordxform") {

TEST_CASE("identity transform") {
  const FrameTransform id = FrameTransform::identity();
  const Point2 p{3.25, -7.5};
  CHECK(to_physical(p, id) == p);
  CHECK(to_spatial(p, id) == p);
}

TEST_CASE("scale and translation") {
  const FrameTransform tf = FrameTransform::from_scale(2.0, 10.0, 20.0);
  const Point2 phys = to_physical(Point2{11.0, 22.0}, tf);
  CHECK(phys.x == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(phys.y == doctest::Approx(4.0).epsilon(1e-15));
  const Point2 sp = to_spatial(Point2{2.0, 4.0}, tf);
  CHECK(sp.x == doctest::Approx(11.0).epsilon(1e-15));
  CHECK(sp.y == doctest::Approx(22.0).epsilon(1e-15));
  const Point2 origin = to_spatial(Point2{0.0, 0.0}, tf);
  CHECK(origin.x == 10.0);
  CHECK(origin.y == 20.0);
  CHECK(velocity_to_physical(3.0, tf) == doctest::Approx(6.0));
}

TEST_CASE("round trips are exact in both directions") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> rho(-3.0, 3.0), t(-50.0, 150.0), x(-100.0, 200.0);
  for (int i = 0; i < 100; ++i) {
    const FrameTransform tf{t(rng), t(rng), rho(rng)};
    CHECK(tf.scale() > 0.0);
    const Point2 p{x(rng), x(rng)};
    const Point2 a = to_spatial(to_physical(p, tf), tf);
    const Point2 b = to_physical(to_spatial(p, tf), tf);
    CHECK(std::abs(a.x - p.x) < 1e-9);
    CHECK(std::abs(a.y - p.y) < 1e-9);
    CHECK(std::abs(b.x - p.x) < 1e-9);
    CHECK(std::abs(b.y - p.y) < 1e-9);
  }
}

TEST_CASE("pull-backs match finite differences") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  const double h = 1e-6;
  auto rel = [](double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12}); };
  for (int trial = 0; trial < 20; ++trial) {
    const FrameTransform tf{10.0 * u(rng), 10.0 * u(rng), 0.5 * u(rng)};
    const double value = 5.0 * u(rng);
    const double upstream = u(rng);
    for (int axis = 0; axis < 2; ++axis) {
      // L = upstream * to_spatial(value)
      TransformGrad g;
      const double d_phys = to_spatial_vjp(value, upstream, tf, axis, g);
      auto loss = [&](FrameTransform f, double v) { return upstream * to_spatial(v, f, axis); };
      FrameTransform a = tf, b = tf;
      a.rho += h;
      b.rho -= h;
      CHECK(rel(g.rho, (loss(a, value) - loss(b, value)) / (2 * h)) < 1e-6);
      a = tf;
      b = tf;
      a.translation(axis) += h;
      b.translation(axis) -= h;
      CHECK(rel(g.translation(axis), (loss(a, value) - loss(b, value)) / (2 * h)) < 1e-6);
      CHECK(rel(d_phys, (loss(tf, value + h) - loss(tf, value - h)) / (2 * h)) < 1e-6);

      // L = upstream * to_physical(value)
      TransformGrad gp;
      const double d_sp = to_physical_vjp(value, upstream, tf, axis, gp);
      auto lossp = [&](FrameTransform f, double v) { return upstream * to_physical(v, f, axis); };
      a = tf;
      b = tf;
      a.rho += h;
      b.rho -= h;
      CHECK(rel(gp.rho, (lossp(a, value) - lossp(b, value)) / (2 * h)) < 1e-6);
      CHECK(rel(d_sp, (lossp(tf, value + h) - lossp(tf, value - h)) / (2 * h)) < 1e-6);
    }
  }
}

}  // TEST_SUITE
