#include <cmath>
#include <random>

#include <doctest.h>

#include "phyvid/dynsim.hpp"
#include "phyvid/error.hpp"
#include "phyvid/physics.hpp"

using namespace phyvid;

namespace {

DynamicsModel decay() {
  return DynamicsModel::exact([](std::span<const double> x, std::span<double> out) { out[0] = -x[0]; }, 1);
}

DynamicsModel harmonic() {
  return DynamicsModel::exact(
      [](std::span<const double> x, std::span<double> out) {
        out[0] = x[1];
        out[1] = -x[0];
      },
      2);
}

struct RandomModel {
  DynamicsModel model;
  Vector x, g0, g1, w;
};

RandomModel random_model(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  const LibrarySpec lib = LibrarySpec::polynomial(2, 3);
  CoefficientMatrix c = CoefficientMatrix::zeros(lib.size(), 2);
  for (Eigen::Index i = 0; i < c.xi.size(); ++i) c.xi.data()[i] = 0.5 * n(rng);
  c.active(3, 0) = false;  // one inactive entry must not contribute
  c.apply_mask();
  RandomModel r{DynamicsModel::learned(lib, c), Vector(2), Vector(2), Vector(2), Vector(2)};
  for (Vector* v : {&r.x, &r.g0, &r.g1, &r.w})
    for (Eigen::Index i = 0; i < 2; ++i) (*v)[i] = 0.5 * n(rng);
  return r;
}

double objective(const RandomModel& r, const Vector& x, const Vector& g0, const Vector& g1,
                 const DynamicsModel& model) {
  return r.w.dot(rk4_step(x, g0, g1, 0.05, model));
}

bool close(double a, double b) { return std::abs(a - b) <= 1e-4 * std::max(std::abs(a), std::abs(b)) + 1e-10; }

}  // namespace

TEST_SUITE("physics") {

TEST_CASE("one step of exponential decay") {
  Vector x(1);
  x << 1.0;
  const Vector z = Vector::Zero(1);
  const Vector next = rk4_step(x, z, z, 0.1, decay());
  CHECK(std::abs(next[0] - 0.90483750) < 1e-8);
  CHECK(std::abs(next[0] - std::exp(-0.1)) < 1e-7);
}

TEST_CASE("zero dynamics leave the state alone") {
  const auto still = DynamicsModel::exact([](std::span<const double>, std::span<double> out) {
    for (double& v : out) v = 0.0;
  }, 3);
  Vector x(3);
  x << 1.0, -2.0, 0.5;
  const Vector z = Vector::Zero(3);
  CHECK(rk4_step(x, z, z, 0.3, still) == x);
}

TEST_CASE("learned steps use only active coefficients") {
  const LibrarySpec lib = LibrarySpec::polynomial(1, 2);
  CoefficientMatrix c = CoefficientMatrix::zeros(lib.size(), 1);
  c.xi << 0.0, -1.0, 123.0;
  c.active(2, 0) = false;  // xi keeps a stale value under a cleared mask
  Vector x(1);
  x << 1.0;
  const Vector z = Vector::Zero(1);
  CHECK(rk4_step(x, z, z, 0.1, DynamicsModel::learned(lib, c))[0] == doctest::Approx(rk4_step(x, z, z, 0.1, decay())[0]));
}

TEST_CASE("step pull-back matches finite differences") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const RandomModel r = random_model(seed);
    const Rk4Grad g = rk4_step_vjp(r.x, r.g0, r.g1, 0.05, r.model, r.w);
    const double h = 1e-6;
    for (int i = 0; i < 2; ++i) {
      Vector a = r.x, b = r.x;
      a[i] += h;
      b[i] -= h;
      CHECK(close(g.d_state[i], (objective(r, a, r.g0, r.g1, r.model) - objective(r, b, r.g0, r.g1, r.model)) / (2 * h)));
      a = r.g0;
      b = r.g0;
      a[i] += h;
      b[i] -= h;
      CHECK(close(g.d_g0[i], (objective(r, r.x, a, r.g1, r.model) - objective(r, r.x, b, r.g1, r.model)) / (2 * h)));
      a = r.g1;
      b = r.g1;
      a[i] += h;
      b[i] -= h;
      CHECK(close(g.d_g1[i], (objective(r, r.x, r.g0, a, r.model) - objective(r, r.x, r.g0, b, r.model)) / (2 * h)));
    }
    const LibrarySpec& lib = r.model.library();
    for (int t = 0; t < lib.size(); ++t)
      for (int eq = 0; eq < 2; ++eq) {
        if (!r.model.coefficients().active(t, eq)) continue;
        CoefficientMatrix up = r.model.coefficients(), down = up;
        up.xi(t, eq) += h;
        down.xi(t, eq) -= h;
        const double numeric = (objective(r, r.x, r.g0, r.g1, DynamicsModel::learned(lib, up)) -
                                objective(r, r.x, r.g0, r.g1, DynamicsModel::learned(lib, down))) /
                               (2 * h);
        CHECK(close(g.d_xi(t, eq), numeric));
      }
  }
}

TEST_CASE("rollout with the true equations reproduces the simulator") {
  const SystemSpec spec = SystemSpec::defaults(SystemKind::Duffing);
  const InputSignal in = make_input(InputKind::TwoSine, {}, 300, 0.02, 4, 1);
  Vector ic(2);
  ic << 0.8, -0.3;
  const Trajectory tr = simulate(spec, ic, in, 0.02, 300);
  const LibrarySpec lib = LibrarySpec::polynomial(2, 3);
  const Matrix out = rollout(ic, in.expand(spec.input_mask), 0.02, 299,
                             DynamicsModel::learned(lib, spec.true_coefficients(lib)));
  CHECK((out - tr.states).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("global error is fourth order") {
  const double horizon = 4.0;
  std::vector<double> log_dt, log_err;
  for (double dt : {0.04, 0.02, 0.01, 0.005}) {
    const int steps = static_cast<int>(std::lround(horizon / dt));
    Vector x0(2);
    x0 << 1.0, 0.0;
    const Matrix out = rollout(x0, Matrix::Zero(steps + 1, 2), dt, steps, harmonic());
    const double err = std::hypot(out(steps, 0) - std::cos(horizon), out(steps, 1) + std::sin(horizon));
    log_dt.push_back(std::log(dt));
    log_err.push_back(std::log(err));
  }
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < log_dt.size(); ++i) {
    mx += log_dt[i] / log_dt.size();
    my += log_err[i] / log_dt.size();
  }
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < log_dt.size(); ++i) {
    sxy += (log_dt[i] - mx) * (log_err[i] - my);
    sxx += (log_dt[i] - mx) * (log_dt[i] - mx);
  }
  CHECK(std::abs(sxy / sxx - 4.0) <= 0.2);
}

TEST_CASE("a blow-up reports its step") {
  const LibrarySpec lib = LibrarySpec::polynomial(1, 3);
  CoefficientMatrix c = CoefficientMatrix::zeros(lib.size(), 1);
  c.xi(3, 0) = 1.0;  // dx/dt = x^3
  Vector x0(1);
  x0 << 3.0;
  try {
    rollout(x0, Matrix::Zero(200, 1), 0.2, 199, DynamicsModel::learned(lib, c));
    FAIL("expected divergence");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::SimulationDiverged);
    CHECK(e.detail().rfind("step ", 0) == 0);
  }
  CHECK_THROWS_AS(rollout(x0, Matrix::Zero(3, 1), 0.1, 5, decay()), Error);
}

}  // TEST_SUITE
