#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "phyvid/error.hpp"
#include "phyvid/trainer.hpp"

namespace phyvid {

namespace {

constexpr int kSize = 16;
constexpr int kSprite = 6;
constexpr int kFrames = 8;
constexpr int kTraj = 2;
constexpr int kObjects = 2;

struct Scene {
  VideoData data;
  ModelState state;
  LossWeights weights;
};

// Values near the centre of a pixel cell keep finite differences away from
// the bilinear kinks at integer positions.
double off_grid(double v, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> frac(0.25, 0.75);
  return std::floor(v) + frac(rng);
}

Scene make_scene(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> n01(0.0, 1.0);
  Scene sc;
  VideoData& v = sc.data;
  v.trajectories = kTraj;
  v.m = kFrames;
  v.frame_size = kSize;
  v.dt = 0.05;
  v.objects = kObjects;
  v.set_positions({{0, 0, ""}, {0, 1, ""}, {1, 0, ""}});
  for (int i = 0; i < kTraj * kFrames; ++i) {
    Image f(kSize, kSize);
    for (double& p : f.px) p = u01(rng);
    v.frames.push_back(std::move(f));
  }
  v.prepare();

  ModelState& s = sc.state;
  s.assets.frame_size = kSize;
  s.assets.background = Image(kSize, kSize);
  for (double& p : s.assets.background.px) p = 0.2 + 0.6 * u01(rng);
  for (int k = 0; k < kObjects; ++k) {
    ObjectAssets o = ObjectAssets::blank(kSprite);
    for (double& p : o.intensity) p = u01(rng);
    for (double& z : o.alpha_logits) z = 1.5 * n01(rng);
    s.assets.objects.push_back(std::move(o));
  }
  s.coords.resize(static_cast<std::size_t>(kTraj) * kFrames * kObjects);
  for (int t = 0; t < kTraj; ++t)
    for (int k = 0; k < kObjects; ++k) {
      const double phase = 2.0 * std::numbers::pi * u01(rng);
      for (int j = 0; j < kFrames; ++j) {
        Point2& c = s.coord(v, t, j, k);
        c.x = off_grid(8.0 + 2.5 * std::sin(0.6 * j + phase), rng);
        c.y = off_grid(k == 0 ? 7.0 + 1.5 * std::cos(0.6 * j + phase) : 9.0, rng);
      }
    }
  s.transforms = {{8.1, 7.9, std::log(0.3)}, {7.7, 9.0, std::log(0.4)}};
  s.library = LibrarySpec::polynomial(v.state_dim(), 2);
  s.coeffs = CoefficientMatrix::zeros(s.library.size(), v.state_dim());
  for (Eigen::Index i = 0; i < s.coeffs.xi.size(); ++i) s.coeffs.xi.data()[i] = 0.3 * n01(rng);
  s.input = Matrix::Zero(kFrames - 2, v.state_dim());
  for (int c = 0; c < v.state_dim(); ++c)
    if (v.input_mask[c])
      for (int r = 0; r < kFrames - 2; ++r) s.input(r, c) = 0.5 * n01(rng);
  sc.weights = {1e-3, 0.7, 0.05, 1e-2};
  return sc;
}

struct Group {
  std::string name;
  std::vector<double*> params;
  std::vector<double> analytic;
};

std::vector<Group> groups(ModelState& s, const ModelGrad& g, const VideoData& v) {
  std::vector<Group> out;
  Group bg{"background", {}, {}};
  for (std::size_t i = 0; i < s.assets.background.px.size(); ++i) {
    bg.params.push_back(&s.assets.background.px[i]);
    bg.analytic.push_back(g.assets.background[i]);
  }
  Group sprite{"sprite", {}, {}}, alpha{"alpha", {}, {}};
  for (std::size_t k = 0; k < s.assets.objects.size(); ++k)
    for (std::size_t i = 0; i < s.assets.objects[k].intensity.size(); ++i) {
      sprite.params.push_back(&s.assets.objects[k].intensity[i]);
      sprite.analytic.push_back(g.assets.intensity[k][i]);
      alpha.params.push_back(&s.assets.objects[k].alpha_logits[i]);
      alpha.analytic.push_back(g.assets.alpha_logits[k][i]);
    }
  Group coords{"coords", {}, {}};
  for (std::size_t i = 0; i < s.coords.size(); ++i) {
    coords.params.push_back(&s.coords[i].x);
    coords.analytic.push_back(g.coords[i].x);
    coords.params.push_back(&s.coords[i].y);
    coords.analytic.push_back(g.coords[i].y);
  }
  Group tf{"transform", {}, {}};
  for (std::size_t k = 0; k < s.transforms.size(); ++k) {
    tf.params.insert(tf.params.end(), {&s.transforms[k].rho, &s.transforms[k].tx, &s.transforms[k].ty});
    tf.analytic.insert(tf.analytic.end(), {g.transforms[k].rho, g.transforms[k].tx, g.transforms[k].ty});
  }
  Group xi{"xi", {}, {}};
  for (Eigen::Index i = 0; i < s.coeffs.xi.size(); ++i) {
    xi.params.push_back(s.coeffs.xi.data() + i);
    xi.analytic.push_back(g.xi.data()[i]);
  }
  Group in{"input", {}, {}};
  for (int c = 0; c < s.input.cols(); ++c)
    if (v.input_mask[c])
      for (int r = 0; r < s.input.rows(); ++r) {
        in.params.push_back(&s.input(r, c));
        in.analytic.push_back(g.input(r, c));
      }
  for (Group* gr : {&bg, &sprite, &alpha, &coords, &tf, &xi, &in}) out.push_back(std::move(*gr));
  return out;
}

}  // namespace

bool GradcheckReport::pass() const {
  return !groups.empty() && std::all_of(groups.begin(), groups.end(), [](const GradcheckGroup& g) { return g.pass; });
}

nlohmann::json GradcheckReport::to_json() const {
  nlohmann::json j;
  j["schema"] = "phyvid.gradcheck/1";
  j["seed"] = seed;
  j["tolerance"] = tolerance;
  j["pass"] = pass();
  j["groups"] = nlohmann::json::array();
  for (const auto& g : groups)
    j["groups"].push_back(
        {{"name", g.name}, {"max_rel_error", g.max_rel_error}, {"checked", g.checked}, {"pass", g.pass}});
  return j;
}

GradcheckReport gradient_check(std::uint64_t seed, const std::string& corrupt) {
  Scene sc = make_scene(seed);
  ModelGrad g;
  total_loss_grad(sc.data, sc.state, sc.weights, &g);
  auto gs = groups(sc.state, g, sc.data);

  GradcheckReport rep;
  rep.seed = seed;
  bool corrupted = corrupt.empty();
  std::mt19937_64 pick(seed ^ 0x9c);
  for (auto& gr : gs) {
    if (gr.name == corrupt) {
      for (double& a : gr.analytic) a *= 1.01;
      corrupted = true;
    }
    // Every entry of small groups; a fixed random subset of the larger ones.
    std::vector<std::size_t> idx(gr.params.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (idx.size() > 48) {
      std::shuffle(idx.begin(), idx.end(), pick);
      idx.resize(48);
      std::sort(idx.begin(), idx.end());
    }
    double amax = 0.0;
    for (double a : gr.analytic) amax = std::max(amax, std::abs(a));
    const double floor = std::max(1e-3 * amax, 1e-12);

    // Appearance and input enter the loss at most quadratically, so a wider
    // step only removes round-off; geometry and coefficients pass through RK4.
    const bool smooth = gr.name == "background" || gr.name == "sprite" || gr.name == "alpha" || gr.name == "input";
    const double step = smooth ? 1e-4 : 1e-5;
    GradcheckGroup out{gr.name, 0.0, 0, true};
    for (std::size_t i : idx) {
      double& p = *gr.params[i];
      const double saved = p;
      const double h = step * std::max(1.0, std::abs(saved));
      p = saved + h;
      const double up = total_loss_grad(sc.data, sc.state, sc.weights, nullptr).total;
      p = saved - h;
      const double down = total_loss_grad(sc.data, sc.state, sc.weights, nullptr).total;
      p = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = gr.analytic[i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      out.max_rel_error = std::max(out.max_rel_error, rel);
      ++out.checked;
    }
    out.pass = out.max_rel_error < rep.tolerance;
    rep.groups.push_back(out);
  }
  if (!corrupted) throw Error(ErrorKind::Validation, "unknown gradient group '" + corrupt + "'");
  return rep;
}

}  // namespace phyvid
