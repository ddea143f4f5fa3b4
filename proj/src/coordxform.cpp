#include "phyvid/coordxform.hpp"

namespace phyvid {

double to_physical(double spatial, const FrameTransform& tf, int axis) {
  return tf.scale() * (spatial - tf.translation(axis));
}

double to_spatial(double physical, const FrameTransform& tf, int axis) {
  return physical / tf.scale() + tf.translation(axis);
}

Point2 to_physical(Point2 spatial, const FrameTransform& tf) {
  return {to_physical(spatial.x, tf, 0), to_physical(spatial.y, tf, 1)};
}

Point2 to_spatial(Point2 physical, const FrameTransform& tf) {
  return {to_spatial(physical.x, tf, 0), to_spatial(physical.y, tf, 1)};
}

double to_physical_vjp(double spatial, double d_physical, const FrameTransform& tf, int axis,
                       TransformGrad& grad) {
  const double s = tf.scale();
  const double centered = spatial - tf.translation(axis);
  grad.rho += d_physical * s * centered;
  grad.translation(axis) -= d_physical * s;
  return d_physical * s;
}

double to_spatial_vjp(double physical, double d_spatial, const FrameTransform& tf, int axis,
                      TransformGrad& grad) {
  const double inv = 1.0 / tf.scale();
  grad.rho -= d_spatial * physical * inv;
  grad.translation(axis) += d_spatial;
  return d_spatial * inv;
}

}  // namespace phyvid
