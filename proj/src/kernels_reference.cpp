#include <algorithm>

#include "phyvid/kernels.hpp"

namespace phyvid {

namespace {

struct Layer {
  Image alpha;    // splatted coverage
  Image premult;  // splatted alpha * intensity
};

Layer splat(const ObjectAssets& obj, Point2 centre, int rows, int cols) {
  Layer l{Image(rows, cols), Image(rows, cols)};
  const int w = obj.size;
  const Placement pl = place_sprite(centre, w);
  const double wx[2] = {1.0 - pl.fx, pl.fx};
  const double wy[2] = {1.0 - pl.fy, pl.fy};
  for (int i = 0; i < w; ++i) {
    for (int j = 0; j < w; ++j) {
      const double a = obj.alpha(i * w + j);
      const double s = obj.intensity[i * w + j];
      for (int di = 0; di < 2; ++di) {
        for (int dj = 0; dj < 2; ++dj) {
          const int r = pl.row0 + i + di;
          const int c = pl.col0 + j + dj;
          if (r < 0 || r >= rows || c < 0 || c >= cols) continue;
          const double wt = wy[di] * wx[dj];
          l.alpha(r, c) += wt * a;
          l.premult(r, c) += wt * a * s;
        }
      }
    }
  }
  return l;
}

}  // namespace

Image decode(std::span<const Point2> coords, const SceneAssets& assets) {
  Image out = assets.background;
  for (int k = 0; k < assets.object_count(); ++k) {
    const Layer l = splat(assets.objects[k], coords[k], out.rows, out.cols);
    for (std::size_t p = 0; p < out.size(); ++p)
      out.px[p] = out.px[p] * (1.0 - l.alpha.px[p]) + l.premult.px[p];
  }
  return out;
}

namespace kernels::reference {

BatchResult loss_grad(std::span<const Image> frames, std::span<const BatchItem> items,
                      std::span<const Point2> coords, const SceneAssets& assets) {
  const int K = assets.object_count();
  BatchResult res;
  res.d_coords.assign(coords.size(), Point2{});
  res.d_assets = AssetGrad::zeros_like(assets);

  for (const BatchItem& item : items) {
    const Image& target = frames[item.frame];
    const int rows = target.rows;
    const int cols = target.cols;
    std::vector<Image> prev;
    std::vector<Layer> layers;
    Image out = assets.background;
    for (int k = 0; k < K; ++k) {
      prev.push_back(out);
      layers.push_back(splat(assets.objects[k], coords[item.coord_offset + k], rows, cols));
      for (std::size_t p = 0; p < out.size(); ++p)
        out.px[p] = out.px[p] * (1.0 - layers[k].alpha.px[p]) + layers[k].premult.px[p];
    }
    Image g(rows, cols);
    for (std::size_t p = 0; p < out.size(); ++p) {
      const double e = out.px[p] - target.px[p];
      res.loss_sum += e * e;
      g.px[p] = 2.0 * e;
    }
    for (int k = K - 1; k >= 0; --k) {
      const ObjectAssets& obj = assets.objects[k];
      const int w = obj.size;
      const Placement pl = place_sprite(coords[item.coord_offset + k], w);
      const double wx[2] = {1.0 - pl.fx, pl.fx};
      const double wy[2] = {1.0 - pl.fy, pl.fy};
      Point2& dc = res.d_coords[item.coord_offset + k];
      for (int i = 0; i < w; ++i) {
        for (int j = 0; j < w; ++j) {
          const int idx = i * w + j;
          const double a = obj.alpha(idx);
          const double s = obj.intensity[idx];
          double da = 0.0;
          double ds = 0.0;
          for (int di = 0; di < 2; ++di) {
            for (int dj = 0; dj < 2; ++dj) {
              const int r = pl.row0 + i + di;
              const int c = pl.col0 + j + dj;
              if (r < 0 || r >= rows || c < 0 || c >= cols) continue;
              const double gA = -g(r, c) * prev[k](r, c);
              const double gC = g(r, c);
              const double through = gA + s * gC;  // d/d(weight * alpha)
              const double wt = wy[di] * wx[dj];
              da += wt * through;
              ds += wt * a * gC;
              dc.x += wy[di] * (dj ? 1.0 : -1.0) * a * through;
              dc.y += (di ? 1.0 : -1.0) * wx[dj] * a * through;
            }
          }
          res.d_assets.alpha_logits[k][idx] += da * a * (1.0 - a);
          res.d_assets.intensity[k][idx] += ds;
        }
      }
      for (std::size_t p = 0; p < g.size(); ++p) g.px[p] *= 1.0 - layers[k].alpha.px[p];
    }
    for (std::size_t p = 0; p < g.size(); ++p) res.d_assets.background[p] += g.px[p];
  }
  return res;
}

}  // namespace kernels::reference
}  // namespace phyvid
