#pragma once

#include <functional>
#include <span>

#include "phyvid/sindy.hpp"

namespace phyvid {

/// Autonomous part f(x) of dx/dt = f(x) + g(t); writes f(x) into `out`.
using VectorField = std::function<void(std::span<const double> x, std::span<double> out)>;

/// Either a closed-form field or a learned polynomial model Theta(x) Xi.
/// Evaluating a learned model only ever touches active coefficients.
class DynamicsModel {
 public:
  static DynamicsModel exact(VectorField f, int dimension);
  static DynamicsModel learned(LibrarySpec library, CoefficientMatrix coeffs);

  int dimension() const { return dimension_; }
  bool is_learned() const { return learned_; }
  const LibrarySpec& library() const { return library_; }
  const CoefficientMatrix& coefficients() const { return coeffs_; }

  void eval(std::span<const double> x, std::span<double> out) const;

 private:
  int dimension_ = 0;
  bool learned_ = false;
  VectorField field_;
  LibrarySpec library_;
  CoefficientMatrix coeffs_;
  Matrix xi_t_;  // masked Xi, transposed [equations x terms]
};

/// One classic RK4 step with the input sampled at g0 (t), (g0+g1)/2 (t+dt/2)
/// and g1 (t+dt). Throws SimulationDiverged on a non-finite result.
Vector rk4_step(const Vector& x, const Vector& g0, const Vector& g1, double dt,
                const DynamicsModel& model);

struct Rk4Grad {
  Vector d_state;
  Matrix d_xi;  // [terms x equations], dense; mask it before use
  Vector d_g0;
  Vector d_g1;
};

/// Reverse-mode pull-back of dL/d(next state) through rk4_step (learned models only).
Rk4Grad rk4_step_vjp(const Vector& x, const Vector& g0, const Vector& g1, double dt,
                     const DynamicsModel& model, const Vector& d_next);

/// Iterated rk4_step: returns (steps+1) x d states, row 0 = x0.
/// `input` needs at least steps+1 rows. Divergence is reported with its step index.
Matrix rollout(const Vector& x0, const Matrix& input, double dt, int steps, const DynamicsModel& model);

}  // namespace phyvid
