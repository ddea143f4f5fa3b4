#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "phyvid/image.hpp"

namespace phyvid {

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

/// One object's appearance: a w x w intensity patch and unconstrained alpha
/// logits (alpha = sigmoid(logit)). Both are trainable.
struct ObjectAssets {
  int size = 0;
  std::vector<double> intensity;
  std::vector<double> alpha_logits;

  static ObjectAssets blank(int size);
  double alpha(int i) const { return sigmoid(alpha_logits[i]); }
  double alpha_mass() const;
};

/// Learned scene: a static background plus sprites composited in index order.
struct SceneAssets {
  int frame_size = 0;
  Image background;
  std::vector<ObjectAssets> objects;

  int object_count() const { return static_cast<int>(objects.size()); }
  void clamp_ranges();  // background and sprite intensities into [0,1]
};

/// Gradient buffers shaped like SceneAssets.
struct AssetGrad {
  std::vector<double> background;
  std::vector<std::vector<double>> intensity;
  std::vector<std::vector<double>> alpha_logits;

  static AssetGrad zeros_like(const SceneAssets& assets);
  void add(const AssetGrad& other);
  void scale(double factor);
};

/// Integer anchor and sub-pixel fraction for writing a w x w sprite centred at
/// `p`. The sprite's top-left pixel lands at (p.x - w/2, p.y - w/2) and is
/// splatted bilinearly over a (w+1) x (w+1) window starting at (row0, col0).
struct Placement {
  int row0 = 0;
  int col0 = 0;
  double fx = 0.0;
  double fy = 0.0;
};

inline Placement place_sprite(Point2 p, int w) {
  const double left = p.x - 0.5 * w;
  const double top = p.y - 0.5 * w;
  Placement pl;
  pl.col0 = static_cast<int>(std::floor(left));
  pl.row0 = static_cast<int>(std::floor(top));
  pl.fx = left - pl.col0;
  pl.fy = top - pl.row0;
  return pl;
}

/// Composite the sprites onto the background at the given centres (one per
/// object). Parts of a window outside the frame are cropped.
Image decode(std::span<const Point2> coords, const SceneAssets& assets);

struct ReconGrad {
  double loss = 0.0;  // mean squared pixel error
  std::vector<Point2> d_coords;
  AssetGrad d_assets;
};

/// Mean squared error between `frame` and decode(coords, assets) with analytic
/// gradients for the coordinates and every asset group.
ReconGrad recon_loss_grad(const Image& frame, std::span<const Point2> coords, const SceneAssets& assets);

/// Per-pixel temporal median; needs at least three frames.
Image estimate_background(std::span<const Image> frames);

/// Temporal median over only the frames in which a pixel lies outside every
/// object's w x w footprint (grown by `margin`); pixels covered in all frames
/// keep the plain median. `centres` holds one list of object centres per frame.
Image estimate_background_masked(std::span<const Image> frames, std::span<const std::vector<Point2>> centres,
                                 int sprite_size, double margin = 1.5);

struct ObjectInit {
  std::vector<ObjectAssets> objects;
  std::vector<std::vector<Point2>> coords;  // [frame][object]
};

struct InitOptions {
  double threshold = 0.08;   // |frame - background| foreground cut
  int min_component = 4;     // pixels
  int sprite_size = 16;
};

/// Foreground components tracked by nearest-neighbour association; each sprite
/// is cropped from the frame where it lies closest to whole-pixel alignment. When
/// `reference` is given its sprites fix object identity (appearance match on
/// the first frame) instead of the default top-to-bottom, left-to-right order.
ObjectInit init_objects(std::span<const Image> frames, const Image& background, int n,
                        const InitOptions& options = {},
                        const std::vector<ObjectAssets>* reference = nullptr);

struct EncodeOptions {
  double temperature = 0.5;
  double min_peak_ratio = 3.0;
  std::optional<Point2> search_center;  // restrict the scan around a prior
  int search_radius = 6;
};

/// Correlation-based localisation of object `k`: normalised cross-correlation
/// of the alpha-weighted sprite against the foreground residual, refined by a
/// soft-argmax over the 5x5 neighbourhood of the best integer placement.
Point2 encode_ncc(const Image& frame, const SceneAssets& assets, int k, const EncodeOptions& options = {});

}  // namespace phyvid
