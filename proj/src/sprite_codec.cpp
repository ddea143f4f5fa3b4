#include "phyvid/sprite_codec.hpp"

#include <algorithm>
#include <limits>
#include <cmath>
#include <numeric>
#include <string>

#include "phyvid/error.hpp"
#include "phyvid/kernels.hpp"

namespace phyvid {

ObjectAssets ObjectAssets::blank(int size) {
  const std::size_t n = static_cast<std::size_t>(size) * size;
  return {size, std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
}

double ObjectAssets::alpha_mass() const {
  double m = 0.0;
  for (double z : alpha_logits) m += sigmoid(z);
  return m;
}

void SceneAssets::clamp_ranges() {
  for (double& v : background.px) v = std::clamp(v, 0.0, 1.0);
  for (auto& o : objects)
    for (double& v : o.intensity) v = std::clamp(v, 0.0, 1.0);
}

AssetGrad AssetGrad::zeros_like(const SceneAssets& assets) {
  AssetGrad g;
  g.background.assign(assets.background.size(), 0.0);
  for (const auto& o : assets.objects) {
    g.intensity.emplace_back(o.intensity.size(), 0.0);
    g.alpha_logits.emplace_back(o.alpha_logits.size(), 0.0);
  }
  return g;
}

void AssetGrad::add(const AssetGrad& other) {
  for (std::size_t i = 0; i < background.size(); ++i) background[i] += other.background[i];
  for (std::size_t k = 0; k < intensity.size(); ++k) {
    for (std::size_t i = 0; i < intensity[k].size(); ++i) intensity[k][i] += other.intensity[k][i];
    for (std::size_t i = 0; i < alpha_logits[k].size(); ++i) alpha_logits[k][i] += other.alpha_logits[k][i];
  }
}

void AssetGrad::scale(double f) {
  for (double& v : background) v *= f;
  for (auto& v : intensity)
    for (double& x : v) x *= f;
  for (auto& v : alpha_logits)
    for (double& x : v) x *= f;
}

ReconGrad recon_loss_grad(const Image& frame, std::span<const Point2> coords, const SceneAssets& assets) {
  if (!frame.same_shape(assets.background) || static_cast<int>(coords.size()) != assets.object_count())
    throw Error(ErrorKind::ShapeMismatch, "frame, background and coordinate count must agree");
  const kernels::BatchItem item{0, 0};
  auto res = kernels::reference::loss_grad({&frame, 1}, {&item, 1}, coords, assets);
  const double norm = 1.0 / static_cast<double>(frame.size());
  ReconGrad out;
  out.loss = res.loss_sum * norm;
  out.d_coords = std::move(res.d_coords);
  for (auto& p : out.d_coords) {
    p.x *= norm;
    p.y *= norm;
  }
  out.d_assets = std::move(res.d_assets);
  out.d_assets.scale(norm);
  return out;
}

Image estimate_background(std::span<const Image> frames) {
  if (frames.size() < 3) throw Error(ErrorKind::TooShort, "background estimate needs >= 3 frames");
  Image bg(frames[0].rows, frames[0].cols);
  std::vector<double> col(frames.size());
  const std::size_t mid = frames.size() / 2;
  for (std::size_t p = 0; p < bg.size(); ++p) {
    for (std::size_t f = 0; f < frames.size(); ++f) col[f] = frames[f].px[p];
    std::nth_element(col.begin(), col.begin() + mid, col.end());
    double m = col[mid];
    if (frames.size() % 2 == 0) m = 0.5 * (m + *std::max_element(col.begin(), col.begin() + mid));
    bg.px[p] = m;
  }
  return bg;
}

Image estimate_background_masked(std::span<const Image> frames, std::span<const std::vector<Point2>> centres,
                                 int sprite_size, double margin) {
  if (frames.size() != centres.size())
    throw Error(ErrorKind::ShapeMismatch, "masked background: one centre list per frame expected");
  Image bg = estimate_background(frames);
  const double half = 0.5 * sprite_size + margin;
  std::vector<double> col;
  col.reserve(frames.size());
  for (int r = 0; r < bg.rows; ++r)
    for (int c = 0; c < bg.cols; ++c) {
      col.clear();
      for (std::size_t f = 0; f < frames.size(); ++f) {
        bool covered = false;
        for (const Point2& p : centres[f])
          covered = covered || (std::abs(c + 0.5 - p.x) < half && std::abs(r + 0.5 - p.y) < half);
        if (!covered) col.push_back(frames[f](r, c));
      }
      if (col.empty()) continue;
      const std::size_t mid = col.size() / 2;
      std::nth_element(col.begin(), col.begin() + mid, col.end());
      double m = col[mid];
      if (col.size() % 2 == 0) m = 0.5 * (m + *std::max_element(col.begin(), col.begin() + mid));
      bg(r, c) = m;
    }
  return bg;
}

// -------------------------------------------------------------- init_objects

namespace {

struct Blob {
  int pixels = 0;
  Point2 centroid;
};

std::vector<Blob> components(const Image& frame, const Image& bg, double threshold, int min_size) {
  const int H = frame.rows, W = frame.cols;
  std::vector<int> label(frame.size(), -1);
  std::vector<Blob> blobs;
  std::vector<int> stack;
  for (int start = 0; start < static_cast<int>(frame.size()); ++start) {
    if (label[start] >= 0 || std::abs(frame.px[start] - bg.px[start]) <= threshold) continue;
    const int id = static_cast<int>(blobs.size());
    Blob b;
    double wsum = 0.0, sx = 0.0, sy = 0.0;
    stack.assign(1, start);
    label[start] = id;
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      const int r = p / W, c = p % W;
      const double w = std::abs(frame.px[p] - bg.px[p]);
      ++b.pixels;
      wsum += w;
      sx += w * (c + 0.5);
      sy += w * (r + 0.5);
      const int nb[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
      for (const auto& q : nb) {
        if (q[0] < 0 || q[0] >= H || q[1] < 0 || q[1] >= W) continue;
        const int qi = q[0] * W + q[1];
        if (label[qi] >= 0 || std::abs(frame.px[qi] - bg.px[qi]) <= threshold) continue;
        label[qi] = id;
        stack.push_back(qi);
      }
    }
    b.centroid = {sx / wsum, sy / wsum};
    blobs.push_back(b);
  }
  std::erase_if(blobs, [&](const Blob& b) { return b.pixels < min_size; });
  std::stable_sort(blobs.begin(), blobs.end(), [](const Blob& a, const Blob& b) { return a.pixels > b.pixels; });
  return blobs;
}

double dist2(Point2 a, Point2 b) { return (a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y); }

// Best assignment of candidates to slots under `cost(slot, cand)`; brute force
// over permutations, n is tiny.
template <class Cost>
std::vector<int> best_assignment(int n, Cost cost) {
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<int> best = perm;
  double best_cost = INFINITY;
  do {
    double c = 0.0;
    for (int k = 0; k < n; ++k) c += cost(k, perm[k]);
    if (c < best_cost) {
      best_cost = c;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

ObjectAssets crop_sprite(const Image& frame, const Image& bg, Point2 centre, int w, double threshold) {
  ObjectAssets obj = ObjectAssets::blank(w);
  const int c0 = static_cast<int>(std::lround(centre.x - 0.5 * w));
  const int r0 = static_cast<int>(std::lround(centre.y - 0.5 * w));
  for (int i = 0; i < w; ++i) {
    for (int j = 0; j < w; ++j) {
      const int r = std::clamp(r0 + i, 0, frame.rows - 1);
      const int c = std::clamp(c0 + j, 0, frame.cols - 1);
      const bool fg = std::abs(frame(r, c) - bg(r, c)) > 0.5 * threshold;
      obj.intensity[i * w + j] = frame(r, c);
      obj.alpha_logits[i * w + j] = fg ? 4.0 : -4.0;
    }
  }
  return obj;
}

// Mean frame intensity under a sprite's opaque core, centred at `c`.
double core_intensity(const Image& frame, const ObjectAssets& obj, Point2 c) {
  const int w = obj.size;
  const int c0 = static_cast<int>(std::lround(c.x - 0.5 * w));
  const int r0 = static_cast<int>(std::lround(c.y - 0.5 * w));
  double s = 0.0;
  int n = 0;
  for (int i = 0; i < w; ++i) {
    for (int j = 0; j < w; ++j) {
      if (obj.alpha(i * w + j) < 0.5) continue;
      const int r = std::clamp(r0 + i, 0, frame.rows - 1);
      const int cc = std::clamp(c0 + j, 0, frame.cols - 1);
      s += frame(r, cc);
      ++n;
    }
  }
  return n ? s / n : 0.0;
}

double sprite_core_intensity(const ObjectAssets& obj) {
  double s = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < obj.intensity.size(); ++i) {
    if (obj.alpha(static_cast<int>(i)) < 0.5) continue;
    s += obj.intensity[i];
    ++n;
  }
  return n ? s / n : 0.0;
}

}  // namespace

ObjectInit init_objects(std::span<const Image> frames, const Image& background, int n,
                        const InitOptions& options, const std::vector<ObjectAssets>* reference) {
  if (n < 1) throw Error(ErrorKind::Validation, "object count must be >= 1");
  if (frames.empty()) throw Error(ErrorKind::InitializationFailed, "no frames");
  ObjectInit out;
  out.coords.reserve(frames.size());
  for (std::size_t f = 0; f < frames.size(); ++f) {
    auto blobs = components(frames[f], background, options.threshold, options.min_component);
    if (static_cast<int>(blobs.size()) < n) {
      throw Error(ErrorKind::InitializationFailed,
                  "frame " + std::to_string(f) + ": found " + std::to_string(blobs.size()) +
                      " foreground components, need " + std::to_string(n));
    }
    blobs.resize(n);
    std::vector<Point2> cur(n);
    if (f == 0) {
      std::vector<int> order;
      if (reference) {
        order = best_assignment(n, [&](int k, int b) {
          return std::abs(core_intensity(frames[0], (*reference)[k], blobs[b].centroid) -
                          sprite_core_intensity((*reference)[k]));
        });
      } else {
        order.resize(n);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
          const Point2 pa = blobs[a].centroid, pb = blobs[b].centroid;
          if (std::abs(pa.y - pb.y) > 1.0) return pa.y < pb.y;
          return pa.x < pb.x;
        });
      }
      for (int k = 0; k < n; ++k) cur[k] = blobs[order[k]].centroid;
    } else {
      const auto& prev = out.coords.back();
      const auto order = best_assignment(n, [&](int k, int b) { return dist2(prev[k], blobs[b].centroid); });
      for (int k = 0; k < n; ++k) cur[k] = blobs[order[k]].centroid;
    }
    out.coords.push_back(std::move(cur));
  }
  // Crop each sprite from the frame where its window sits closest to the pixel
  // grid, fully inside the frame and clear of the other objects: the crop is
  // then least blurred by the sub-pixel splat.
  const int w = options.sprite_size;
  for (int k = 0; k < n; ++k) {
    std::size_t best = 0;
    double best_off = std::numeric_limits<double>::infinity();
    for (std::size_t f = 0; f < out.coords.size(); ++f) {
      const Point2 c = out.coords[f][k];
      const double left = c.x - 0.5 * w, top = c.y - 0.5 * w;
      if (left < 0.5 || top < 0.5 || left + w > frames[f].cols - 0.5 || top + w > frames[f].rows - 0.5) continue;
      bool clear = true;
      for (int o = 0; o < n; ++o)
        if (o != k && std::max(std::abs(out.coords[f][o].x - c.x), std::abs(out.coords[f][o].y - c.y)) < w + 1)
          clear = false;
      if (!clear) continue;
      const double off = std::max(std::abs(left - std::round(left)), std::abs(top - std::round(top)));
      if (off < best_off) {
        best_off = off;
        best = f;
      }
    }
    out.objects.push_back(crop_sprite(frames[best], background, out.coords[best][k], w, options.threshold));
  }
  return out;
}

// ---------------------------------------------------------------- encode_ncc

Point2 encode_ncc(const Image& frame, const SceneAssets& assets, int k, const EncodeOptions& opt) {
  const ObjectAssets& obj = assets.objects.at(k);
  if (!(obj.alpha_mass() > 0.0)) throw Error(ErrorKind::Validation, "sprite has no alpha mass");
  const int w = obj.size;
  const int H = frame.rows;
  const int W = frame.cols;
  const Image& bg = assets.background;
  const int last_r = H - w;
  const int last_c = W - w;
  if (last_r < 0 || last_c < 0) throw Error(ErrorKind::Validation, "sprite larger than frame");

  // The peak is taken within the search radius; the confidence surface spans
  // at least one sprite width so that a smooth sprite's broad correlation
  // hill does not fill the whole surface.
  int r_lo = 0, r_hi = last_r, c_lo = 0, c_hi = last_c;
  int pr_lo = 0, pr_hi = last_r, pc_lo = 0, pc_hi = last_c;
  if (opt.search_center) {
    const int rc = static_cast<int>(std::lround(opt.search_center->y - 0.5 * w));
    const int cc = static_cast<int>(std::lround(opt.search_center->x - 0.5 * w));
    const int conf = std::max(opt.search_radius, w);
    r_lo = std::clamp(rc - conf, 0, last_r);
    r_hi = std::clamp(rc + conf, 0, last_r);
    c_lo = std::clamp(cc - conf, 0, last_c);
    c_hi = std::clamp(cc + conf, 0, last_c);
    pr_lo = std::clamp(rc - opt.search_radius, 0, last_r);
    pr_hi = std::clamp(rc + opt.search_radius, 0, last_r);
    pc_lo = std::clamp(cc - opt.search_radius, 0, last_c);
    pc_hi = std::clamp(cc + opt.search_radius, 0, last_c);
  }

  std::vector<double> alpha(static_cast<std::size_t>(w) * w);
  for (int i = 0; i < w * w; ++i) alpha[i] = obj.alpha(i);

  const int sr = r_hi - r_lo + 1;
  const int scn = c_hi - c_lo + 1;
  std::vector<double> score(static_cast<std::size_t>(sr) * scn, 0.0);
  const double n = static_cast<double>(w) * w;
  for (int r0 = r_lo; r0 <= r_hi; ++r0) {
    for (int c0 = c_lo; c0 <= c_hi; ++c0) {
      double sd = 0, st = 0, sdd = 0, stt = 0, sdt = 0;
      for (int i = 0; i < w; ++i) {
        for (int j = 0; j < w; ++j) {
          const double b = bg(r0 + i, c0 + j);
          const double d = frame(r0 + i, c0 + j) - b;
          const double t = alpha[i * w + j] * (obj.intensity[i * w + j] - b);
          sd += d;
          st += t;
          sdd += d * d;
          stt += t * t;
          sdt += d * t;
        }
      }
      const double cov = sdt - sd * st / n;
      const double vd = std::max(sdd - sd * sd / n, 0.0);
      const double vt = std::max(stt - st * st / n, 0.0);
      score[(r0 - r_lo) * scn + (c0 - c_lo)] = cov / (std::sqrt(vd * vt) + 1e-12);
    }
  }

  std::size_t best = static_cast<std::size_t>(pr_lo - r_lo) * scn + (pc_lo - c_lo);
  double mean_abs = 0.0;
  for (std::size_t i = 0; i < score.size(); ++i) {
    const int r = r_lo + static_cast<int>(i) / scn, c = c_lo + static_cast<int>(i) % scn;
    if (r >= pr_lo && r <= pr_hi && c >= pc_lo && c <= pc_hi && score[i] > score[best]) best = i;
    mean_abs += std::abs(score[i]);
  }
  mean_abs /= static_cast<double>(score.size());
  const double peak = score[best];
  if (!(peak > 0.0) || peak < opt.min_peak_ratio * mean_abs) {
    throw Error(ErrorKind::LowConfidence, "object " + std::to_string(k) + ": correlation peak " +
                                              std::to_string(peak) + " vs surface mean " +
                                              std::to_string(mean_abs));
  }
  const int br = static_cast<int>(best) / scn;
  const int bc = static_cast<int>(best) % scn;

  // Temperature is measured against the peak's drop to its 4-neighbours so the
  // soft-argmax width adapts to the sprite's correlation length.
  auto at = [&](int r, int c) { return score[static_cast<std::size_t>(r) * scn + c]; };
  double ring = 0.0;
  int ring_n = 0;
  const int nb[4][2] = {{br - 1, bc}, {br + 1, bc}, {br, bc - 1}, {br, bc + 1}};
  for (const auto& q : nb) {
    if (q[0] < 0 || q[0] >= sr || q[1] < 0 || q[1] >= scn) continue;
    ring += at(q[0], q[1]);
    ++ring_n;
  }
  const double drop = ring_n ? std::max(peak - ring / ring_n, 1e-9) : 1.0;
  double wsum = 0.0, ex = 0.0, ey = 0.0;
  for (int dr = -2; dr <= 2; ++dr) {
    for (int dc = -2; dc <= 2; ++dc) {
      const int r = br + dr, c = bc + dc;
      if (r < 0 || r >= sr || c < 0 || c >= scn) continue;
      const double wgt = std::exp((at(r, c) - peak) / (opt.temperature * drop));
      wsum += wgt;
      ex += wgt * (c_lo + c);
      ey += wgt * (r_lo + r);
    }
  }
  const double x = ex / wsum + 0.5 * w;
  const double y = ey / wsum + 0.5 * w;
  return {std::clamp(x, 0.0, static_cast<double>(W)), std::clamp(y, 0.0, static_cast<double>(H))};
}

}  // namespace phyvid
