#include "phyvid/physics.hpp"

#include <cmath>
#include <vector>

#include "phyvid/error.hpp"

namespace phyvid {

DynamicsModel DynamicsModel::exact(VectorField f, int dimension) {
  DynamicsModel m;
  m.dimension_ = dimension;
  m.field_ = std::move(f);
  return m;
}

DynamicsModel DynamicsModel::learned(LibrarySpec library, CoefficientMatrix coeffs) {
  if (coeffs.xi.rows() != library.size() || coeffs.xi.cols() != library.variables)
    throw Error(ErrorKind::ShapeMismatch, "coefficient matrix does not match library");
  DynamicsModel m;
  m.dimension_ = library.variables;
  m.learned_ = true;
  coeffs.apply_mask();
  m.xi_t_ = coeffs.xi.transpose();
  m.library_ = std::move(library);
  m.coeffs_ = std::move(coeffs);
  return m;
}

void DynamicsModel::eval(std::span<const double> x, std::span<double> out) const {
  if (!learned_) {
    field_(x, out);
    return;
  }
  thread_local std::vector<double> theta;
  theta.resize(library_.size());
  library_row(x, library_, theta);
  const Eigen::Map<const Vector> th(theta.data(), library_.size());
  Eigen::Map<Vector> o(out.data(), dimension_);
  o.noalias() = xi_t_ * th;
}

namespace {

struct Stages {
  Vector y[4];
  Vector k[4];
};

Vector field(const DynamicsModel& model, const Vector& y, const Vector& g) {
  Vector out(y.size());
  model.eval({y.data(), static_cast<std::size_t>(y.size())}, {out.data(), static_cast<std::size_t>(out.size())});
  return out + g;
}

Stages forward(const Vector& x, const Vector& g0, const Vector& g1, double dt, const DynamicsModel& model) {
  const Vector gm = 0.5 * (g0 + g1);
  Stages s;
  s.y[0] = x;
  s.k[0] = field(model, s.y[0], g0);
  s.y[1] = x + 0.5 * dt * s.k[0];
  s.k[1] = field(model, s.y[1], gm);
  s.y[2] = x + 0.5 * dt * s.k[1];
  s.k[2] = field(model, s.y[2], gm);
  s.y[3] = x + dt * s.k[2];
  s.k[3] = field(model, s.y[3], g1);
  return s;
}

}  // namespace

Vector rk4_step(const Vector& x, const Vector& g0, const Vector& g1, double dt,
                const DynamicsModel& model) {
  const Stages s = forward(x, g0, g1, dt, model);
  Vector next = x + dt / 6.0 * (s.k[0] + 2.0 * s.k[1] + 2.0 * s.k[2] + s.k[3]);
  if (!next.allFinite()) throw Error(ErrorKind::SimulationDiverged, "rk4 step produced a non-finite state");
  return next;
}

Rk4Grad rk4_step_vjp(const Vector& x, const Vector& g0, const Vector& g1, double dt,
                     const DynamicsModel& model, const Vector& d_next) {
  if (!model.is_learned()) throw Error(ErrorKind::Validation, "rk4 gradients need a learned model");
  const LibrarySpec& lib = model.library();
  const Matrix& xi = model.coefficients().xi;
  const int d = model.dimension();
  const Stages s = forward(x, g0, g1, dt, model);

  Rk4Grad g{d_next, Matrix::Zero(lib.size(), d), Vector::Zero(d), Vector::Zero(d)};
  Vector dk[4] = {dt / 6.0 * d_next, dt / 3.0 * d_next, dt / 3.0 * d_next, dt / 6.0 * d_next};
  Vector dgm = Vector::Zero(d);
  std::vector<double> theta(lib.size());
  Vector w(lib.size());
  Vector dy(d);

  for (int stage = 3; stage >= 0; --stage) {
    const Vector& y = s.y[stage];
    const std::span<const double> ys{y.data(), static_cast<std::size_t>(d)};
    library_row(ys, lib, theta);
    const Eigen::Map<const Vector> th(theta.data(), lib.size());
    g.d_xi.noalias() += th * dk[stage].transpose();
    w.noalias() = xi * dk[stage];
    dy.setZero();
    library_row_vjp(ys, lib, {w.data(), static_cast<std::size_t>(w.size())}, {dy.data(), static_cast<std::size_t>(d)});
    if (stage == 3) g.d_g1 += dk[3];
    else if (stage == 0) g.d_g0 += dk[0];
    else dgm += dk[stage];
    // y_stage = x + c * k_{stage-1}
    g.d_state += dy;
    if (stage == 3) dk[2] += dt * dy;
    if (stage == 2) dk[1] += 0.5 * dt * dy;
    if (stage == 1) dk[0] += 0.5 * dt * dy;
  }
  g.d_g0 += 0.5 * dgm;
  g.d_g1 += 0.5 * dgm;
  return g;
}

Matrix rollout(const Vector& x0, const Matrix& input, double dt, int steps, const DynamicsModel& model) {
  if (input.rows() < steps + 1)
    throw Error(ErrorKind::Validation, "input series shorter than steps + 1");
  Matrix out(steps + 1, x0.size());
  out.row(0) = x0.transpose();
  Vector x = x0;
  for (int j = 0; j < steps; ++j) {
    try {
      x = rk4_step(x, input.row(j).transpose(), input.row(j + 1).transpose(), dt, model);
    } catch (const Error& e) {
      throw Error(e.kind(), "step " + std::to_string(j) + ": " + e.detail());
    }
    out.row(j + 1) = x.transpose();
  }
  return out;
}

}  // namespace phyvid
