#pragma once

#include <cstddef>
#include <vector>

namespace phyvid {

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  double& operator[](int axis) { return axis == 0 ? x : y; }
  double operator[](int axis) const { return axis == 0 ? x : y; }
  friend bool operator==(const Point2&, const Point2&) = default;
};

/// Row-major grayscale raster. Pixel (r, c) covers [c, c+1) x [r, r+1) in
/// spatial coordinates, so its center sits at (c + 0.5, r + 0.5).
struct Image {
  int rows = 0;
  int cols = 0;
  std::vector<double> px;

  Image() = default;
  Image(int r, int c, double fill = 0.0)
      : rows(r), cols(c), px(static_cast<std::size_t>(r) * c, fill) {}

  double& operator()(int r, int c) { return px[static_cast<std::size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return px[static_cast<std::size_t>(r) * cols + c]; }
  std::size_t size() const { return px.size(); }
  bool same_shape(const Image& o) const { return rows == o.rows && cols == o.cols; }
};

}  // namespace phyvid
