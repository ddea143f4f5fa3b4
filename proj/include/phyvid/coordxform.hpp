#pragma once

#include <cmath>

#include "phyvid/image.hpp"

namespace phyvid {

/// Similarity map between pixel coordinates and one object's physical frame:
///   physical = s * (spatial - t),   spatial = physical / s + t,   s = exp(rho).
/// Both directions share the same three parameters.
struct FrameTransform {
  double tx = 0.0;
  double ty = 0.0;
  double rho = 0.0;

  double scale() const { return std::exp(rho); }
  double translation(int axis) const { return axis == 0 ? tx : ty; }
  double& translation(int axis) { return axis == 0 ? tx : ty; }

  static FrameTransform identity() { return {}; }
  static FrameTransform from_scale(double s, double tx, double ty) { return {tx, ty, std::log(s)}; }
};

Point2 to_physical(Point2 spatial, const FrameTransform& tf);
Point2 to_spatial(Point2 physical, const FrameTransform& tf);

double to_physical(double spatial, const FrameTransform& tf, int axis);
double to_spatial(double physical, const FrameTransform& tf, int axis);

// Velocities carry no translation.
inline double velocity_to_physical(double spatial_rate, const FrameTransform& tf) {
  return tf.scale() * spatial_rate;
}

/// Parameter gradient of a scalar loss, accumulated in (rho, tx, ty) order.
struct TransformGrad {
  double rho = 0.0;
  double tx = 0.0;
  double ty = 0.0;

  double& translation(int axis) { return axis == 0 ? tx : ty; }
};

// Pull back dL/d(physical) on one axis through to_physical.
// Returns dL/d(spatial); adds the parameter part to `grad`.
double to_physical_vjp(double spatial, double d_physical, const FrameTransform& tf, int axis,
                       TransformGrad& grad);

// Pull back dL/d(spatial) on one axis through to_spatial.
// Returns dL/d(physical); adds the parameter part to `grad`.
double to_spatial_vjp(double physical, double d_spatial, const FrameTransform& tf, int axis,
                      TransformGrad& grad);

}  // namespace phyvid
