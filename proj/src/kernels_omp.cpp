#include <algorithm>

#include "phyvid/kernels.hpp"

namespace phyvid::kernels {

TargetStats TargetStats::build(std::span<const Image> frames, std::span<const BatchItem> items) {
  TargetStats st;
  st.count = static_cast<int>(items.size());
  if (items.empty()) return st;
  const std::size_t n = frames[items[0].frame].size();
  st.mean.assign(n, 0.0);
  st.centered_sq.assign(n, 0.0);
  for (const BatchItem& it : items) {
    const auto& px = frames[it.frame].px;
    for (std::size_t p = 0; p < n; ++p) st.mean[p] += px[p];
  }
  for (double& m : st.mean) m /= st.count;
  for (const BatchItem& it : items) {
    const auto& px = frames[it.frame].px;
    for (std::size_t p = 0; p < n; ++p) {
      const double d = px[p] - st.mean[p];
      st.centered_sq[p] += d * d;
    }
  }
  return st;
}

namespace {

struct Box {
  int r0 = 0, c0 = 0, r1 = 0, c1 = 0;  // half-open
  int rows() const { return r1 - r0; }
  int cols() const { return c1 - c0; }
  bool empty() const { return r1 <= r0 || c1 <= c0; }
};

struct Scratch {
  std::vector<double> out;
  std::vector<std::vector<double>> prev;
  std::vector<std::vector<double>> win_alpha;
  std::vector<std::vector<double>> win_premult;
  std::vector<double> g;
  std::vector<double> alpha;  // sigmoid of logits, per object
};

struct ChunkAcc {
  double loss = 0.0;
  AssetGrad grad;
};

// Splat one sprite into its own (w+1)^2 window buffers.
void splat_window(const ObjectAssets& obj, const double* alpha, const Placement& pl,
                  std::vector<double>& wa, std::vector<double>& wc) {
  const int w = obj.size;
  const int ww = w + 1;
  wa.assign(static_cast<std::size_t>(ww) * ww, 0.0);
  wc.assign(static_cast<std::size_t>(ww) * ww, 0.0);
  const double wx0 = 1.0 - pl.fx, wx1 = pl.fx;
  const double wy0 = 1.0 - pl.fy, wy1 = pl.fy;
  for (int i = 0; i < w; ++i) {
    for (int j = 0; j < w; ++j) {
      const double a = alpha[i * w + j];
      const double as = a * obj.intensity[i * w + j];
      double* ra = &wa[static_cast<std::size_t>(i) * ww + j];
      double* rc = &wc[static_cast<std::size_t>(i) * ww + j];
      ra[0] += wy0 * wx0 * a;
      ra[1] += wy0 * wx1 * a;
      ra[ww] += wy1 * wx0 * a;
      ra[ww + 1] += wy1 * wx1 * a;
      rc[0] += wy0 * wx0 * as;
      rc[1] += wy0 * wx1 * as;
      rc[ww] += wy1 * wx0 * as;
      rc[ww + 1] += wy1 * wx1 * as;
    }
  }
}

void process_item(const Image& target, const BatchItem& item, std::span<const Point2> coords,
                  const SceneAssets& assets, Scratch& sc, ChunkAcc& acc, std::vector<Point2>& d_coords) {
  const int K = assets.object_count();
  const int H = target.rows;
  const int Wd = target.cols;
  std::vector<Placement> pls(K);
  Box box{H, Wd, 0, 0};
  for (int k = 0; k < K; ++k) {
    const int w = assets.objects[k].size;
    pls[k] = place_sprite(coords[item.coord_offset + k], w);
    box.r0 = std::min(box.r0, pls[k].row0);
    box.c0 = std::min(box.c0, pls[k].col0);
    box.r1 = std::max(box.r1, pls[k].row0 + w + 1);
    box.c1 = std::max(box.c1, pls[k].col0 + w + 1);
  }
  box.r0 = std::max(box.r0, 0);
  box.c0 = std::max(box.c0, 0);
  box.r1 = std::min(box.r1, H);
  box.c1 = std::min(box.c1, Wd);
  if (box.empty()) return;

  const int bc = box.cols();
  const std::size_t bn = static_cast<std::size_t>(box.rows()) * bc;
  const Image& bg = assets.background;
  sc.out.resize(bn);
  for (int r = box.r0; r < box.r1; ++r)
    for (int c = box.c0; c < box.c1; ++c) sc.out[(r - box.r0) * bc + (c - box.c0)] = bg(r, c);

  sc.prev.resize(K);
  sc.win_alpha.resize(K);
  sc.win_premult.resize(K);
  for (int k = 0; k < K; ++k) {
    const ObjectAssets& obj = assets.objects[k];
    const int ww = obj.size + 1;
    splat_window(obj, &sc.alpha[static_cast<std::size_t>(k) * obj.size * obj.size], pls[k],
                 sc.win_alpha[k], sc.win_premult[k]);
    sc.prev[k] = sc.out;
    for (int a = 0; a < ww; ++a) {
      const int r = pls[k].row0 + a;
      if (r < box.r0 || r >= box.r1) continue;
      for (int b = 0; b < ww; ++b) {
        const int c = pls[k].col0 + b;
        if (c < box.c0 || c >= box.c1) continue;
        double& o = sc.out[(r - box.r0) * bc + (c - box.c0)];
        o = o * (1.0 - sc.win_alpha[k][a * ww + b]) + sc.win_premult[k][a * ww + b];
      }
    }
  }

  // Window correction against the background-only baseline.
  sc.g.resize(bn);
  double corr = 0.0;
  for (int r = box.r0; r < box.r1; ++r) {
    for (int c = box.c0; c < box.c1; ++c) {
      const std::size_t p = (r - box.r0) * bc + (c - box.c0);
      const double t = target(r, c);
      const double e = sc.out[p] - t;
      const double e0 = bg(r, c) - t;
      corr += e * e - e0 * e0;
      sc.g[p] = 2.0 * e;
    }
  }
  acc.loss += corr;

  for (int k = K - 1; k >= 0; --k) {
    const ObjectAssets& obj = assets.objects[k];
    const int w = obj.size;
    const int ww = w + 1;
    const Placement& pl = pls[k];
    const double wx[2] = {1.0 - pl.fx, pl.fx};
    const double wy[2] = {1.0 - pl.fy, pl.fy};
    const double* alpha = &sc.alpha[static_cast<std::size_t>(k) * w * w];
    // Window-local upstream terms; zero where the window leaves the frame.
    thread_local std::vector<double> gA, gC;
    gA.assign(static_cast<std::size_t>(ww) * ww, 0.0);
    gC.assign(static_cast<std::size_t>(ww) * ww, 0.0);
    for (int a = 0; a < ww; ++a) {
      const int r = pl.row0 + a;
      if (r < box.r0 || r >= box.r1) continue;
      for (int b = 0; b < ww; ++b) {
        const int c = pl.col0 + b;
        if (c < box.c0 || c >= box.c1) continue;
        const std::size_t p = (r - box.r0) * bc + (c - box.c0);
        gA[a * ww + b] = -sc.g[p] * sc.prev[k][p];
        gC[a * ww + b] = sc.g[p];
      }
    }
    double dx = 0.0, dy = 0.0;
    auto& d_int = acc.grad.intensity[k];
    auto& d_logit = acc.grad.alpha_logits[k];
    for (int i = 0; i < w; ++i) {
      for (int j = 0; j < w; ++j) {
        const int idx = i * w + j;
        const double av = alpha[idx];
        const double s = obj.intensity[idx];
        const std::size_t t00 = static_cast<std::size_t>(i) * ww + j;
        const double th00 = gA[t00] + s * gC[t00];
        const double th01 = gA[t00 + 1] + s * gC[t00 + 1];
        const double th10 = gA[t00 + ww] + s * gC[t00 + ww];
        const double th11 = gA[t00 + ww + 1] + s * gC[t00 + ww + 1];
        const double da = wy[0] * (wx[0] * th00 + wx[1] * th01) + wy[1] * (wx[0] * th10 + wx[1] * th11);
        const double ds = av * (wy[0] * (wx[0] * gC[t00] + wx[1] * gC[t00 + 1]) +
                                wy[1] * (wx[0] * gC[t00 + ww] + wx[1] * gC[t00 + ww + 1]));
        dx += av * (wy[0] * (th01 - th00) + wy[1] * (th11 - th10));
        dy += av * (wx[0] * (th10 - th00) + wx[1] * (th11 - th01));
        d_logit[idx] += da * av * (1.0 - av);
        d_int[idx] += ds;
      }
    }
    d_coords[item.coord_offset + k].x += dx;
    d_coords[item.coord_offset + k].y += dy;
    for (int a = 0; a < ww; ++a) {
      const int r = pl.row0 + a;
      if (r < box.r0 || r >= box.r1) continue;
      for (int b = 0; b < ww; ++b) {
        const int c = pl.col0 + b;
        if (c < box.c0 || c >= box.c1) continue;
        sc.g[(r - box.r0) * bc + (c - box.c0)] *= 1.0 - sc.win_alpha[k][a * ww + b];
      }
    }
  }

  auto& d_bg = acc.grad.background;
  for (int r = box.r0; r < box.r1; ++r) {
    for (int c = box.c0; c < box.c1; ++c) {
      const std::size_t p = (r - box.r0) * bc + (c - box.c0);
      d_bg[static_cast<std::size_t>(r) * Wd + c] += sc.g[p] - 2.0 * (bg(r, c) - target(r, c));
    }
  }
}

}  // namespace

BatchResult loss_grad(std::span<const Image> frames, std::span<const BatchItem> items,
                      std::span<const Point2> coords, const TargetStats& stats,
                      const SceneAssets& assets, int chunks) {
  BatchResult res;
  res.d_coords.assign(coords.size(), Point2{});
  res.d_assets = AssetGrad::zeros_like(assets);
  const int n_items = static_cast<int>(items.size());
  if (n_items == 0) return res;
  chunks = std::max(1, std::min(chunks, n_items));

  std::vector<double> alpha;
  for (const auto& obj : assets.objects)
    for (double z : obj.alpha_logits) alpha.push_back(sigmoid(z));

  std::vector<ChunkAcc> acc(chunks);
#pragma omp parallel
  {
    Scratch sc;
    sc.alpha = alpha;
#pragma omp for schedule(dynamic, 1)
    for (int ch = 0; ch < chunks; ++ch) {
      acc[ch].grad = AssetGrad::zeros_like(assets);
      const int lo = static_cast<int>(static_cast<long>(n_items) * ch / chunks);
      const int hi = static_cast<int>(static_cast<long>(n_items) * (ch + 1) / chunks);
      for (int i = lo; i < hi; ++i)
        process_item(frames[items[i].frame], items[i], coords, assets, sc, acc[ch], res.d_coords);
    }
  }

  // Pixels outside every window see only the background: closed form from the target stats.
  const auto& bg = assets.background.px;
  double base = 0.0;
  for (std::size_t p = 0; p < bg.size(); ++p) {
    const double d = bg[p] - stats.mean[p];
    base += stats.count * d * d + stats.centered_sq[p];
    res.d_assets.background[p] = 2.0 * stats.count * d;
  }
  res.loss_sum = base;
  for (const ChunkAcc& a : acc) {
    res.loss_sum += a.loss;
    res.d_assets.add(a.grad);
  }
  return res;
}

}  // namespace phyvid::kernels
