#pragma once

#include <span>
#include <vector>

#include "phyvid/sprite_codec.hpp"

// Batched reconstruction loss and gradients over many (target frame, sprite
// centres) items. `reference` is the plain full-frame version kept for
// testing; the default kernel only visits sprite windows and is OpenMP
// parallel over fixed item chunks reduced in chunk order, so results do not
// depend on the thread count.
namespace phyvid::kernels {

struct BatchItem {
  int frame = 0;         // index into the frame list
  int coord_offset = 0;  // first of object_count() centres in the coord list
};

struct BatchResult {
  double loss_sum = 0.0;           // sum over items and pixels of squared error
  std::vector<Point2> d_coords;    // same layout as the coord list
  AssetGrad d_assets;
};

/// Per-pixel mean and centred sum of squares of the targets of a batch.
struct TargetStats {
  int count = 0;
  std::vector<double> mean;
  std::vector<double> centered_sq;

  static TargetStats build(std::span<const Image> frames, std::span<const BatchItem> items);
};

namespace reference {
BatchResult loss_grad(std::span<const Image> frames, std::span<const BatchItem> items,
                      std::span<const Point2> coords, const SceneAssets& assets);
}  // namespace reference

BatchResult loss_grad(std::span<const Image> frames, std::span<const BatchItem> items,
                      std::span<const Point2> coords, const TargetStats& stats,
                      const SceneAssets& assets, int chunks = 32);

}  // namespace phyvid::kernels
