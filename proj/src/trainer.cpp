#include "phyvid/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "phyvid/error.hpp"
#include "phyvid/io.hpp"
#include "phyvid/physics.hpp"

namespace phyvid {

namespace fs = std::filesystem;
using nlohmann::json;

// ------------------------------------------------------------------ VideoData

void VideoData::set_positions(std::vector<PositionVar> p) {
  positions = std::move(p);
  const int n = position_count();
  input_mask.assign(2 * n, false);
  for (int i = 0; i < n; ++i) input_mask[n + i] = true;
  state_names.clear();
  for (auto& pv : positions) {
    pv.name = std::string(pv.axis == 0 ? "x" : "y") + (objects > 1 ? std::to_string(pv.object + 1) : "");
    state_names.push_back(pv.name);
  }
  for (const auto& pv : positions) state_names.push_back("v" + pv.name);
}

void VideoData::prepare() {
  recon_items.clear();
  int_items.clear();
  for (int t = 0; t < trajectories; ++t)
    for (int j = 0; j < m; ++j) recon_items.push_back({t * m + j, (t * m + j) * objects});
  // Forward-prediction targets are frames 2..m-2 of each trajectory; the
  // predicted centres live in their own list in (traj, j) order.
  int offset = 0;
  for (int t = 0; t < trajectories; ++t)
    for (int j = 1; j <= m - 3; ++j, offset += objects) int_items.push_back({t * m + j + 1, offset});
  recon_stats = kernels::TargetStats::build(frames, recon_items);
  int_stats = kernels::TargetStats::build(frames, int_items);
}

VideoData VideoData::from_manifest(const DatasetManifest& manifest, bool raw, int objects) {
  VideoData v;
  v.trajectories = static_cast<int>(manifest.trajectories.size());
  v.m = manifest.config.frames;
  v.frame_size = manifest.config.frame_size;
  v.sprite_size = manifest.config.sprite_size;
  v.dt = manifest.config.dt;
  v.objects = objects > 0 ? objects : manifest.system.objects;
  if (v.m < 4) throw Error(ErrorKind::TooShort, "discovery needs at least 4 frames per trajectory");
  for (int t = 0; t < v.trajectories; ++t) {
    auto f = manifest.load_frames(t, raw);
    for (auto& img : f) v.frames.push_back(std::move(img));
  }
  v.prepare();
  return v;
}

Matrix ModelState::physical_positions(const VideoData& v, int traj) const {
  const int p = v.position_count();
  Matrix q(v.m, p);
  for (int j = 0; j < v.m; ++j)
    for (int i = 0; i < p; ++i) {
      const auto& pv = v.positions[i];
      q(j, i) = to_physical(coord(v, traj, j, pv.object)[pv.axis], transforms[pv.object], pv.axis);
    }
  return q;
}

ModelGrad ModelGrad::zeros_like(const ModelState& s) {
  ModelGrad g;
  g.assets = AssetGrad::zeros_like(s.assets);
  g.coords.assign(s.coords.size(), Point2{});
  g.transforms.assign(s.transforms.size(), TransformGrad{});
  g.xi = Matrix::Zero(s.coeffs.xi.rows(), s.coeffs.xi.cols());
  g.input = Matrix::Zero(s.input.rows(), s.input.cols());
  return g;
}

// ----------------------------------------------------------------------- loss

namespace {

bool all_finite(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

void check_finite(const LossTerms& terms, const ModelGrad* g) {
  std::vector<std::string> bad;
  if (!std::isfinite(terms.total)) bad.push_back("loss");
  if (g) {
    bool assets_ok = all_finite(g->assets.background);
    for (const auto& v : g->assets.intensity) assets_ok = assets_ok && all_finite(v);
    for (const auto& v : g->assets.alpha_logits) assets_ok = assets_ok && all_finite(v);
    if (!assets_ok) bad.push_back("assets");
    if (!std::all_of(g->coords.begin(), g->coords.end(),
                     [](const Point2& p) { return std::isfinite(p.x) && std::isfinite(p.y); }))
      bad.push_back("coords");
    for (const auto& t : g->transforms)
      if (!std::isfinite(t.rho) || !std::isfinite(t.tx) || !std::isfinite(t.ty)) {
        bad.push_back("transforms");
        break;
      }
    if (!g->xi.allFinite()) bad.push_back("xi");
    if (!g->input.allFinite()) bad.push_back("input");
  }
  if (bad.empty()) return;
  std::string groups;
  for (const auto& b : bad) groups += (groups.empty() ? "" : ", ") + b;
  std::fprintf(stderr, "non-finite values: recon=%g dyn=%g int=%g reg=%g total=%g; groups: %s\n", terms.recon,
               terms.dyn, terms.integ, terms.reg, terms.total, groups.c_str());
  throw Error(ErrorKind::NumericalFailure, "non-finite loss or gradient in: " + groups);
}

}  // namespace

LossTerms total_loss_grad(const VideoData& data, const ModelState& s, const LossWeights& w, ModelGrad* grad) {
  const int T = data.trajectories;
  const int m = data.m;
  const int K = data.objects;
  const int P = data.position_count();
  const int d = 2 * P;
  const double npx = static_cast<double>(data.frame_size) * data.frame_size;
  if (grad) *grad = ModelGrad::zeros_like(s);
  LossTerms out;

  {
    const auto r = kernels::loss_grad(data.frames, data.recon_items, s.coords, data.recon_stats, s.assets);
    const double norm = 1.0 / (static_cast<double>(data.recon_items.size()) * npx);
    out.recon = r.loss_sum * norm;
    if (grad) {
      grad->assets = r.d_assets;
      grad->assets.scale(norm);
      for (std::size_t i = 0; i < r.d_coords.size(); ++i) {
        grad->coords[i].x = r.d_coords[i].x * norm;
        grad->coords[i].y = r.d_coords[i].y * norm;
      }
    }
  }

  const bool physics = (w.dyn > 0.0 || w.integ > 0.0) && P > 0;
  if (physics) {
    const DynamicsModel model = DynamicsModel::learned(s.library, s.coeffs);
    const Matrix& xi = s.coeffs.xi;
    const double dyn_norm = 1.0 / (static_cast<double>(T) * (m - 2) * d);
    std::vector<StateSpaceData> ss(T);
    std::vector<Matrix> d_states(T), d_rates(T);
    for (int t = 0; t < T; ++t) {
      ss[t] = state_space_from_positions(s.physical_positions(data, t), data.dt);
      d_states[t] = Matrix::Zero(m - 2, d);
      d_rates[t] = Matrix::Zero(m - 2, d);
    }

    if (w.dyn > 0.0) {
      double sum = 0.0;
      for (int t = 0; t < T; ++t) {
        const Matrix theta = build_library(ss[t].states, s.library);
        const Matrix r = ss[t].rates - theta * xi - s.input;
        sum += r.squaredNorm();
        if (!grad) continue;
        const Matrix dr = (2.0 * w.dyn * dyn_norm) * r;
        d_rates[t] += dr;
        grad->xi -= theta.transpose() * dr;
        grad->input -= dr;
        const Matrix d_theta = -dr * xi.transpose();
        for (int j = 0; j < m - 2; ++j) {
          const Vector state = ss[t].states.row(j).transpose();
          const Vector wrow = d_theta.row(j).transpose();
          Vector g = Vector::Zero(d);
          library_row_vjp({state.data(), static_cast<std::size_t>(d)}, s.library,
                          {wrow.data(), static_cast<std::size_t>(wrow.size())}, {g.data(), static_cast<std::size_t>(d)});
          d_states[t].row(j) += g.transpose();
        }
      }
      out.dyn = sum * dyn_norm;
    }

    if (w.integ > 0.0) {
      const int pairs = m - 3;
      std::vector<Point2> pred(static_cast<std::size_t>(T) * pairs * K);
      std::vector<Vector> next(static_cast<std::size_t>(T) * pairs);
      for (int t = 0; t < T; ++t) {
        for (int j = 1; j <= pairs; ++j) {
          const std::size_t item = static_cast<std::size_t>(t) * pairs + (j - 1);
          const Vector x = ss[t].states.row(j - 1).transpose();
          const Vector g0 = s.input.row(j - 1).transpose();
          const Vector g1 = s.input.row(j).transpose();
          try {
            next[item] = rk4_step(x, g0, g1, data.dt, model);
          } catch (const Error& e) {
            throw Error(e.kind(), "forward prediction, trajectory " + std::to_string(t) + " frame " +
                                      std::to_string(j) + ": " + e.detail());
          }
          for (int k = 0; k < K; ++k) pred[item * K + k] = s.coord(data, t, j + 1, k);
          for (int i = 0; i < P; ++i) {
            const auto& pv = data.positions[i];
            pred[item * K + pv.object][pv.axis] = to_spatial(next[item][i], s.transforms[pv.object], pv.axis);
          }
        }
      }
      const auto r = kernels::loss_grad(data.frames, data.int_items, pred, data.int_stats, s.assets);
      const double norm = 1.0 / (static_cast<double>(data.int_items.size()) * npx);
      out.integ = r.loss_sum * norm;
      if (grad) {
        AssetGrad ga = r.d_assets;
        ga.scale(w.integ * norm);
        grad->assets.add(ga);
        const double scale = w.integ * norm;
        for (int t = 0; t < T; ++t) {
          for (int j = 1; j <= pairs; ++j) {
            const std::size_t item = static_cast<std::size_t>(t) * pairs + (j - 1);
            std::vector<bool> moving(static_cast<std::size_t>(K) * 2, false);
            Vector d_next = Vector::Zero(d);
            for (int i = 0; i < P; ++i) {
              const auto& pv = data.positions[i];
              moving[pv.object * 2 + pv.axis] = true;
              const double ds = r.d_coords[item * K + pv.object][pv.axis] * scale;
              d_next[i] = to_spatial_vjp(next[item][i], ds, s.transforms[pv.object], pv.axis,
                                         grad->transforms[pv.object]);
            }
            for (int k = 0; k < K; ++k)
              for (int a = 0; a < 2; ++a)
                if (!moving[k * 2 + a])
                  grad->coords[(static_cast<std::size_t>(t) * m + j + 1) * K + k][a] +=
                      r.d_coords[item * K + k][a] * scale;
            const Vector x = ss[t].states.row(j - 1).transpose();
            const Vector g0 = s.input.row(j - 1).transpose();
            const Vector g1 = s.input.row(j).transpose();
            const Rk4Grad rg = rk4_step_vjp(x, g0, g1, data.dt, model, d_next);
            d_states[t].row(j - 1) += rg.d_state.transpose();
            grad->xi += rg.d_xi;
            grad->input.row(j - 1) += rg.d_g0.transpose();
            grad->input.row(j) += rg.d_g1.transpose();
          }
        }
      }
    }

    if (grad) {
      for (int t = 0; t < T; ++t) {
        const Matrix dq = state_space_vjp(d_states[t], d_rates[t], data.dt);
        for (int j = 0; j < m; ++j)
          for (int i = 0; i < P; ++i) {
            const auto& pv = data.positions[i];
            Point2& gc = grad->coords[(static_cast<std::size_t>(t) * m + j) * K + pv.object];
            gc[pv.axis] += to_physical_vjp(s.coord(data, t, j, pv.object)[pv.axis], dq(j, i),
                                           s.transforms[pv.object], pv.axis, grad->transforms[pv.object]);
          }
      }
      for (int c = 0; c < d; ++c)
        if (!data.input_mask[c]) grad->input.col(c).setZero();
      grad->xi = s.coeffs.active.select(grad->xi, Matrix::Zero(grad->xi.rows(), grad->xi.cols()));
    }
  }

  if (w.reg > 0.0 && s.coeffs.xi.size() > 0) {
    out.reg = l_half_reg(s.coeffs.xi, w.reg_epsilon, s.coeffs.active);
    if (grad) grad->xi += w.reg * l_half_reg_grad(s.coeffs.xi, w.reg_epsilon, s.coeffs.active);
  }

  out.total = out.recon + w.dyn * out.dyn + w.integ * out.integ + w.reg * out.reg;
  check_finite(out, grad);
  return out;
}

// ----------------------------------------------------------------------- Adam

Adam::Adam(std::size_t n, double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {
  reset(n);
}

void Adam::reset(std::size_t n) {
  t_ = 0;
  m_.assign(n, 0.0);
  v_.assign(n, 0.0);
}

double Adam::delta(std::size_t i, double g, double lr) {
  m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
  v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g * g;
  const double mh = m_[i] / (1.0 - std::pow(beta1_, static_cast<double>(t_)));
  const double vh = v_[i] / (1.0 - std::pow(beta2_, static_cast<double>(t_)));
  return lr * mh / (std::sqrt(vh) + eps_);
}

// ------------------------------------------------------------------ discovery

namespace {

struct StagePlan {
  std::string name;
  int iterations = 0;
  LossWeights weights;
  double lr_assets = 0.0;
  double lr_alpha = 0.0;
  double lr_coords = 0.0;
  double lr_shift = 0.0;
  double lr_scale = 0.0;
  double lr_xi = 0.0;
  double lr_input = 0.0;
};

class Trainer {
 public:
  Trainer(const VideoData& data, const TrainConfig& cfg, ModelState& state, DiscoveryResult& result)
      : data_(data), cfg_(cfg), s_(state), res_(result) {}

  void run(const StagePlan& plan, int iteration_offset = 0);

 private:
  void reset_moments();
  void step(const ModelGrad& g, const StagePlan& plan, double factor);

  const VideoData& data_;
  const TrainConfig& cfg_;
  ModelState& s_;
  DiscoveryResult& res_;
  Adam bg_, coords_, shift_, scale_, xi_, input_;
  std::vector<Adam> intensity_, alpha_;
};

void Trainer::reset_moments() {
  bg_.reset(s_.assets.background.size());
  intensity_.assign(s_.assets.objects.size(), Adam());
  alpha_.assign(s_.assets.objects.size(), Adam());
  for (std::size_t k = 0; k < s_.assets.objects.size(); ++k) {
    intensity_[k].reset(s_.assets.objects[k].intensity.size());
    alpha_[k].reset(s_.assets.objects[k].alpha_logits.size());
  }
  coords_.reset(s_.coords.size() * 2);
  shift_.reset(s_.transforms.size() * 2);
  scale_.reset(s_.transforms.size());
  xi_.reset(static_cast<std::size_t>(s_.coeffs.xi.size()));
  input_.reset(static_cast<std::size_t>(s_.input.size()));
}

void Trainer::step(const ModelGrad& g, const StagePlan& plan, double f) {
  for (Adam* a : {&bg_, &coords_, &shift_, &scale_, &xi_, &input_}) a->tick();
  for (auto& a : intensity_) a.tick();
  for (auto& a : alpha_) a.tick();

  if (plan.lr_assets > 0.0 || plan.lr_alpha > 0.0) {
    const double lr = plan.lr_assets * f;
    const double lr_alpha = plan.lr_alpha * f;
    auto& bg = s_.assets.background.px;
    for (std::size_t i = 0; i < bg.size(); ++i) bg[i] -= bg_.delta(i, g.assets.background[i], lr);
    for (std::size_t k = 0; k < s_.assets.objects.size(); ++k) {
      auto& obj = s_.assets.objects[k];
      for (std::size_t i = 0; i < obj.intensity.size(); ++i)
        obj.intensity[i] -= intensity_[k].delta(i, g.assets.intensity[k][i], lr);
      for (std::size_t i = 0; i < obj.alpha_logits.size(); ++i) {
        obj.alpha_logits[i] -= alpha_[k].delta(i, g.assets.alpha_logits[k][i], lr_alpha);
        obj.alpha_logits[i] = std::clamp(obj.alpha_logits[i], -12.0, 12.0);
      }
    }
    s_.assets.clamp_ranges();
  }
  if (plan.lr_coords > 0.0) {
    const double lr = plan.lr_coords * f;
    const double h = data_.frame_size;
    for (std::size_t i = 0; i < s_.coords.size(); ++i) {
      s_.coords[i].x = std::clamp(s_.coords[i].x - coords_.delta(2 * i, g.coords[i].x, lr), 0.0, h);
      s_.coords[i].y = std::clamp(s_.coords[i].y - coords_.delta(2 * i + 1, g.coords[i].y, lr), 0.0, h);
    }
  }
  if (!cfg_.freeze_transform) {
    for (std::size_t k = 0; k < s_.transforms.size(); ++k) {
      if (plan.lr_shift > 0.0) {
        s_.transforms[k].tx -= shift_.delta(2 * k, g.transforms[k].tx, plan.lr_shift * f);
        s_.transforms[k].ty -= shift_.delta(2 * k + 1, g.transforms[k].ty, plan.lr_shift * f);
      }
      if (plan.lr_scale > 0.0) s_.transforms[k].rho -= scale_.delta(k, g.transforms[k].rho, plan.lr_scale * f);
    }
  }
  if (plan.lr_xi > 0.0) {
    Matrix& xi = s_.coeffs.xi;
    for (Eigen::Index c = 0; c < xi.cols(); ++c)
      for (Eigen::Index r = 0; r < xi.rows(); ++r)
        if (s_.coeffs.active(r, c))
          xi(r, c) -= xi_.delta(static_cast<std::size_t>(c * xi.rows() + r), g.xi(r, c), plan.lr_xi * f);
    s_.coeffs.apply_mask();
  }
  if (plan.lr_input > 0.0) {
    Matrix& in = s_.input;
    for (Eigen::Index c = 0; c < in.cols(); ++c) {
      if (!data_.input_mask[c]) continue;
      const double mean_g = g.input.col(c).mean();
      for (Eigen::Index r = 0; r < in.rows(); ++r)
        in(r, c) -= input_.delta(static_cast<std::size_t>(c * in.rows() + r), g.input(r, c) - mean_g, plan.lr_input * f);
      in.col(c).array() -= in.col(c).mean();
    }
  }
}

void Trainer::run(const StagePlan& plan, int offset) {
  reset_moments();
  StageTrace* trace = nullptr;
  for (auto& tr : res_.traces)
    if (tr.stage == plan.name) trace = &tr;
  if (!trace) {
    res_.traces.push_back({plan.name, {}});
    trace = &res_.traces.back();
  }
  ModelGrad g;
  const int n = plan.iterations;
  const int report = std::max(1, n / 5);
  for (int it = 0; it < n; ++it) {
    LossTerms terms;
    try {
      terms = total_loss_grad(data_, s_, plan.weights, &g);
    } catch (const Error& e) {
      throw Error(e.kind(), "stage " + plan.name + ", iteration " + std::to_string(offset + it) + ": " + e.detail());
    }
    if (it % cfg_.trace_every == 0) trace->points.push_back({offset + it, terms});
    if (it % report == 0)
      std::fprintf(stderr, "[%s %5d] total %.6g recon %.4g dyn %.4g int %.4g reg %.4g\n", plan.name.c_str(),
                   offset + it, terms.total, terms.recon, terms.dyn, terms.integ, terms.reg);
    const double f = n > 1 ? std::pow(cfg_.lr.decay_to, static_cast<double>(it) / (n - 1)) : 1.0;
    step(g, plan, f);
  }
  const LossTerms last = total_loss_grad(data_, s_, plan.weights, nullptr);
  trace->points.push_back({offset + n, last});
}

LossWeights full_weights(const TrainConfig& c) { return {c.lambda1, c.lambda2, c.lambda3, c.reg_epsilon}; }

StagePlan plan_for(const std::string& name, int iterations, const TrainConfig& c, const LossWeights& w) {
  StagePlan p;
  p.name = name;
  p.iterations = iterations;
  p.weights = w;
  p.lr_assets = c.lr.assets;
  p.lr_alpha = c.lr.alpha;
  p.lr_coords = c.lr.coords_late;
  p.lr_shift = c.lr.shift;
  p.lr_scale = c.lr.scale;
  p.lr_xi = c.lr.xi;
  p.lr_input = c.lr.input;
  return p;
}

// Stacked library and rates of all trajectories with their time index.
struct StackedData {
  Matrix theta;
  Matrix rates;
  std::vector<int> time_index;
};

StackedData stack(const VideoData& v, const ModelState& s) {
  StackedData st;
  const int rows = v.trajectories * (v.m - 2);
  st.theta.resize(rows, s.library.size());
  st.rates.resize(rows, v.state_dim());
  for (int t = 0; t < v.trajectories; ++t) {
    const auto ss = state_space_from_positions(s.physical_positions(v, t), v.dt);
    st.theta.middleRows(t * (v.m - 2), v.m - 2) = build_library(ss.states, s.library);
    st.rates.middleRows(t * (v.m - 2), v.m - 2) = ss.rates;
    for (int j = 0; j < v.m - 2; ++j) st.time_index.push_back(j);
  }
  return st;
}

// Closed-form least squares for the active coefficients and the shared input.
void joint_refit(const VideoData& v, ModelState& s) {
  const StackedData st = stack(v, s);
  try {
    const InputFit fit =
        fit_with_unknown_input(st.theta, st.rates, st.time_index, v.m - 2, s.coeffs.active, v.input_mask);
    s.coeffs.xi = fit.xi;
    s.coeffs.apply_mask();
    s.input = fit.input;
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::RankDeficient) throw;
    std::fprintf(stderr, "joint refit skipped: %s\n", e.what());
  }
}

// Coefficients of f(x + q) for a polynomial f over the library, with q
// shifting the position variables only.  The library is closed under the
// substitution, so the result is exact.
Matrix shifted_coefficients(const LibrarySpec& lib, const Matrix& xi, const Vector& q) {
  Matrix out = Matrix::Zero(xi.rows(), xi.cols());
  std::vector<int> e(lib.variables);
  for (int t = 0; t < lib.size(); ++t) {
    if ((xi.row(t).array() == 0.0).all()) continue;
    const auto& ex = lib.terms[t];
    // Enumerate every lower exponent vector k <= ex on the shifted variables.
    std::vector<int> k(ex.begin(), ex.end());
    for (Eigen::Index i = q.size(); i < lib.variables; ++i) k[i] = ex[i];
    while (true) {
      double w = 1.0;
      for (Eigen::Index i = 0; i < q.size(); ++i) {
        const int n = ex[i], r = k[i];
        double binom = 1.0;
        for (int j = 1; j <= n - r; ++j) binom = binom * (r + j) / j;
        w *= binom * std::pow(q[i], n - r);
      }
      const int dst = lib.find(k);
      if (dst >= 0) out.row(dst) += w * xi.row(t);
      Eigen::Index i = 0;
      for (; i < q.size(); ++i) {
        if (k[i] > 0) {
          --k[i];
          break;
        }
        k[i] = ex[i];
      }
      if (i == q.size()) break;
    }
  }
  return out;
}

// Translating the position origin rewrites a polynomial model without
// changing its fit: an offset shows up as a constant plus lower-order terms
// (a cubic gains a square). Small constants fall under the threshold and the
// other terms then absorb the offset, so before thresholding pick the origin
// that makes the least-squares coefficients sparsest in L1, preferring no
// shift on ties.
void choose_origin(const VideoData& v, ModelState& s) {
  const int p = v.position_count();
  const Matrix xi = s.coeffs.xi;
  auto cost = [&](const Vector& q) {
    return shifted_coefficients(s.library, xi, q).cwiseAbs().sum() + 1e-9 * q.norm();
  };
  Vector q = Vector::Zero(p);
  double best = cost(q);
  const double base = best;
  // Coordinate sweeps: a coarse grid over the unit-variance range, then
  // successively finer grids around the incumbent.
  for (int sweep = 0; sweep < 4; ++sweep)
    for (int i = 0; i < p; ++i) {
      double centre = q[i], half = 1.5;
      for (int level = 0; level < 5; ++level) {
        const double step = half / 30.0;
        double arg = centre;
        for (int g = -30; g <= 30; ++g) {
          Vector trial = q;
          trial[i] = centre + g * step;
          const double c = cost(trial);
          if (c < best) {
            best = c;
            arg = trial[i];
          }
        }
        q[i] = centre = arg;
        half = 2.0 * step;
      }
    }
  if (!(best < base - 1e-12)) return;
  for (int i = 0; i < p; ++i) {
    const auto& pv = v.positions[i];
    FrameTransform& tf = s.transforms[pv.object];
    tf.translation(pv.axis) += q[i] / tf.scale();
  }
}

// Background, object identities and NCC coordinates; moving axes and the
// unit-variance transforms are read off those coordinates.
void initialise(VideoData& v, ModelState& s, const TrainConfig& cfg) {
  const int K = v.objects;
  Image bg = estimate_background(v.frames);
  InitOptions opts = cfg.init;
  opts.sprite_size = v.sprite_size;
  std::vector<ObjectInit> inits;
  auto track = [&] {
    inits.clear();
    for (int t = 0; t < v.trajectories; ++t) {
      try {
        inits.push_back(init_objects(v.trajectory_frames(t), bg, K, opts, t == 0 ? nullptr : &inits[0].objects));
      } catch (const Error& e) {
        throw Error(e.kind(), "initialisation, trajectory " + std::to_string(t) + ": " + e.detail());
      }
    }
  };
  // An object that lingers over a pixel for most of the video leaks into the
  // plain median; re-estimate from the frames where the tracked objects are
  // elsewhere, then track again.
  for (int pass = 0; pass < 2; ++pass) {
    track();
    std::vector<std::vector<Point2>> centres;
    for (const auto& in : inits) centres.insert(centres.end(), in.coords.begin(), in.coords.end());
    bg = estimate_background_masked(v.frames, centres, opts.sprite_size);
  }
  track();
  s.assets.frame_size = v.frame_size;
  s.assets.background = bg;
  s.assets.objects = inits[0].objects;

  s.coords.assign(static_cast<std::size_t>(v.trajectories) * v.m * K, Point2{});
  int fallbacks = 0;
  for (int t = 0; t < v.trajectories; ++t)
    for (int j = 0; j < v.m; ++j)
      for (int k = 0; k < K; ++k) {
        EncodeOptions eo;
        eo.temperature = cfg.temperature;
        eo.search_center = inits[t].coords[j][k];
        try {
          s.coord(v, t, j, k) = encode_ncc(v.frame(t, j), s.assets, k, eo);
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::LowConfidence) throw;
          s.coord(v, t, j, k) = inits[t].coords[j][k];
          ++fallbacks;
        }
      }
  if (fallbacks) std::fprintf(stderr, "NCC fell back to component centroids for %d placements\n", fallbacks);

  std::vector<PositionVar> positions;
  s.transforms.assign(K, FrameTransform::identity());
  for (int k = 0; k < K; ++k) {
    double pooled = 0.0;
    int moving = 0;
    double mean[2] = {0.0, 0.0};
    for (int a = 0; a < 2; ++a) {
      double sum = 0.0, sq = 0.0;
      const int n = v.trajectories * v.m;
      for (int t = 0; t < v.trajectories; ++t)
        for (int j = 0; j < v.m; ++j) sum += s.coord(v, t, j, k)[a];
      mean[a] = sum / n;
      for (int t = 0; t < v.trajectories; ++t)
        for (int j = 0; j < v.m; ++j) sq += std::pow(s.coord(v, t, j, k)[a] - mean[a], 2);
      const double sd = std::sqrt(sq / n);
      if (sd > 1.0) {
        positions.push_back({k, a, ""});
        pooled += sd * sd;
        ++moving;
      }
    }
    if (!cfg.freeze_transform && moving > 0)
      s.transforms[k] = FrameTransform::from_scale(1.0 / std::sqrt(pooled / moving), mean[0], mean[1]);
  }
  if (positions.empty()) throw Error(ErrorKind::InitializationFailed, "no object moves by more than one pixel");
  v.set_positions(std::move(positions));
}

DiscoveryResult run_discovery(const DatasetManifest& manifest, const TrainConfig& cfg, bool full) {
  cfg.validate();
  VideoData data = VideoData::from_manifest(manifest, cfg.raw_frames, cfg.objects);
  DiscoveryResult res;
  res.config = cfg;
  res.data_dir = manifest.root.string();
  ModelState& s = res.state;
  initialise(data, s, cfg);

  const int d = data.state_dim();
  s.library = LibrarySpec::polynomial(d, cfg.library_degree, cfg.library_constant);
  s.coeffs = CoefficientMatrix::zeros(s.library.size(), d);
  s.input = Matrix::Zero(data.m - 2, d);

  Trainer trainer(data, cfg, s, res);
  StagePlan pre = plan_for("pretrain", cfg.stages.pretrain, cfg, LossWeights{});
  pre.lr_coords = cfg.lr.coords;
  pre.lr_shift = pre.lr_scale = pre.lr_xi = pre.lr_input = 0.0;
  trainer.run(pre);

  // Small seeded start for the coefficients; the input starts at zero.
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> n01(0.0, 1e-3);
  for (Eigen::Index i = 0; i < s.coeffs.xi.size(); ++i) s.coeffs.xi.data()[i] = n01(rng);
  trainer.run(plan_for("joint", cfg.stages.joint, cfg, full_weights(cfg)));

  if (full) {
    int offset = 0;
    for (int r = 0; r < cfg.stages.rounds; ++r) {
      joint_refit(data, s);
      if (!cfg.freeze_transform) {
        choose_origin(data, s);
        joint_refit(data, s);
      }
      try {
        sequential_threshold(s.coeffs, cfg.threshold, data.input_mask);
      } catch (const Error& e) {
        throw Error(e.kind(), "stage threshold, round " + std::to_string(r + 1) + ": " + e.detail());
      }
      joint_refit(data, s);
      res.masks.push_back(s.coeffs.active);
      std::fprintf(stderr, "round %d: %d active terms\n", r + 1, s.coeffs.active_count());
      trainer.run(plan_for("threshold", cfg.stages.between_rounds, cfg, full_weights(cfg)), offset);
      offset += cfg.stages.between_rounds + 1;
    }
    LossWeights w = full_weights(cfg);
    w.reg = 0.0;
    joint_refit(data, s);
    trainer.run(plan_for("refine", cfg.stages.refine, cfg, w));
  }

  res.trajectories = data.trajectories;
  res.m = data.m;
  res.frame_size = data.frame_size;
  res.dt = data.dt;
  res.objects = data.objects;
  res.positions = data.positions;
  res.input_mask = data.input_mask;
  res.state_names = data.state_names;
  return res;
}

std::string padded3(int v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%03d", v);
  return buf;
}

json mask_json(const MaskMatrix& mk) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < mk.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < mk.cols(); ++c) row.push_back(mk(r, c) ? 1 : 0);
    rows.push_back(row);
  }
  return rows;
}

json terms_json(const LossTerms& t) {
  return {{"recon", t.recon}, {"dyn", t.dyn}, {"int", t.integ}, {"reg", t.reg}, {"total", t.total}};
}

}  // namespace

DiscoveryResult discover(const DatasetManifest& manifest, const TrainConfig& config) {
  return run_discovery(manifest, config, true);
}

DiscoveryResult discover_without_transform(const DatasetManifest& manifest, const TrainConfig& config) {
  TrainConfig c = config;
  c.freeze_transform = true;
  return run_discovery(manifest, c, false);
}

// -------------------------------------------------------------- persistence

VideoData DiscoveryResult::layout() const {
  VideoData v;
  v.trajectories = trajectories;
  v.m = m;
  v.frame_size = frame_size;
  v.dt = dt;
  v.objects = objects;
  v.positions = positions;
  v.input_mask = input_mask;
  v.state_names = state_names;
  return v;
}

Matrix DiscoveryResult::physical_positions(int traj) const { return state.physical_positions(layout(), traj); }

const StageTrace* DiscoveryResult::trace(const std::string& stage) const {
  for (const auto& t : traces)
    if (t.stage == stage) return &t;
  return nullptr;
}

void DiscoveryResult::save(const fs::path& dir) const {
  const int K = objects;
  json j;
  j["schema"] = kSchema;
  j["data_dir"] = data_dir;
  j["config"] = config.to_json();
  j["provenance"] = provenance;
  j["layout"] = {{"trajectories", trajectories}, {"frames", m},          {"frame_size", frame_size},
                 {"dt", dt},                     {"objects", objects},  {"input_mask", input_mask},
                 {"state_names", state_names}};
  j["layout"]["positions"] = json::array();
  for (const auto& p : positions)
    j["layout"]["positions"].push_back({{"object", p.object}, {"axis", p.axis}, {"name", p.name}});
  j["transforms"] = json::array();
  for (const auto& t : state.transforms)
    j["transforms"].push_back({{"tx", t.tx}, {"ty", t.ty}, {"rho", t.rho}, {"scale", t.scale()}});
  j["library"] = {{"variables", state.library.variables},
                  {"degree", state.library.degree},
                  {"constant", state.library.include_constant}};
  json xi = json::array();
  for (Eigen::Index r = 0; r < state.coeffs.xi.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < state.coeffs.xi.cols(); ++c) row.push_back(state.coeffs.xi(r, c));
    xi.push_back(row);
  }
  j["xi"] = xi;
  j["active"] = mask_json(state.coeffs.active);
  j["equations"] = equations_to_json(state.library, state.coeffs, state_names, input_mask);
  j["equations_text"] = format_equations(state.library, state.coeffs, state_names, input_mask);
  j["masks"] = json::array();
  for (const auto& mk : masks) j["masks"].push_back(mask_json(mk));
  j["traces"] = json::array();
  for (const auto& tr : traces) {
    json pts = json::array();
    for (const auto& p : tr.points) {
      json e = terms_json(p.terms);
      e["iteration"] = p.iteration;
      pts.push_back(e);
    }
    j["traces"].push_back({{"stage", tr.stage}, {"points", pts}});
  }
  j["assets"] = {{"background", "assets/background.f32"}, {"sprites", json::array()}, {"alpha_logits", json::array()}};
  // assets.json describes every raw array: float32 little-endian, row-major.
  json header = {{"dtype", "float32-le"}, {"order", "row-major"}, {"arrays", json::array()}};
  auto array = [&](const std::string& file, const char* role, int object, int side) {
    header["arrays"].push_back({{"file", file}, {"role", role}, {"object", object}, {"shape", {side, side}}});
  };
  io::write_f32(dir / "assets/background.f32", state.assets.background.px);
  io::write_png(dir / "assets/background.png", state.assets.background);
  array("background.f32", "background", -1, frame_size);
  for (int k = 0; k < K; ++k) {
    const std::string sp = "sprite_" + std::to_string(k + 1) + ".f32";
    const std::string ap = "alpha_logits_" + std::to_string(k + 1) + ".f32";
    const int w = state.assets.objects[k].size;
    io::write_f32(dir / "assets" / sp, state.assets.objects[k].intensity);
    io::write_f32(dir / "assets" / ap, state.assets.objects[k].alpha_logits);
    array(sp, "intensity", k, w);
    array(ap, "alpha_logits", k, w);
    j["assets"]["sprites"].push_back("assets/" + sp);
    j["assets"]["alpha_logits"].push_back("assets/" + ap);
  }
  io::write_json(dir / "assets/assets.json", header);

  // Input on interior times, forced columns only.
  io::CsvTable in;
  in.header.push_back("t");
  std::vector<int> forced;
  for (int c = 0; c < static_cast<int>(input_mask.size()); ++c)
    if (input_mask[c]) {
      forced.push_back(c);
      in.header.push_back("g" + std::to_string(forced.size()));
    }
  for (int r = 0; r < state.input.rows(); ++r) {
    std::vector<double> row{(r + 1) * dt};
    for (int c : forced) row.push_back(state.input(r, c));
    in.rows.push_back(std::move(row));
  }
  io::write_csv(dir / "input.csv", in);
  j["input_csv"] = "input.csv";

  j["coords_csv"] = json::array();
  const VideoData lay = layout();
  for (int t = 0; t < trajectories; ++t) {
    io::CsvTable tab;
    tab.header.push_back("t");
    for (int k = 0; k < K; ++k) {
      tab.header.push_back("xs_" + std::to_string(k + 1));
      tab.header.push_back("ys_" + std::to_string(k + 1));
    }
    for (const auto& p : positions) tab.header.push_back(p.name);
    const Matrix q = state.physical_positions(lay, t);
    for (int jj = 0; jj < m; ++jj) {
      std::vector<double> row{jj * dt};
      for (int k = 0; k < K; ++k) {
        row.push_back(state.coord(lay, t, jj, k).x);
        row.push_back(state.coord(lay, t, jj, k).y);
      }
      for (Eigen::Index i = 0; i < q.cols(); ++i) row.push_back(q(jj, i));
      tab.rows.push_back(std::move(row));
    }
    const std::string path = "coords/traj" + padded3(t) + ".csv";
    io::write_csv(dir / path, tab);
    j["coords_csv"].push_back(path);
  }

  io::write_text(dir / "config.toml", config.to_toml());
  io::write_json(dir / "result.json", j);
}

DiscoveryResult DiscoveryResult::load(const fs::path& dir) {
  const fs::path file = dir / "result.json";
  if (!fs::exists(file)) throw Error(ErrorKind::Io, "no result.json in " + dir.string());
  const json j = io::read_json(file);
  DiscoveryResult r;
  try {
    if (j.at("schema").get<std::string>() != kSchema)
      throw Error(ErrorKind::Validation, "unsupported result schema " + j.at("schema").dump());
    r.data_dir = j.at("data_dir").get<std::string>();
    r.provenance = j.at("provenance");
    r.config = TrainConfig::from_toml_file(dir / "config.toml");
    const auto& lay = j.at("layout");
    r.trajectories = lay.at("trajectories").get<int>();
    r.m = lay.at("frames").get<int>();
    r.frame_size = lay.at("frame_size").get<int>();
    r.dt = lay.at("dt").get<double>();
    r.objects = lay.at("objects").get<int>();
    r.input_mask = lay.at("input_mask").get<std::vector<bool>>();
    r.state_names = lay.at("state_names").get<std::vector<std::string>>();
    for (const auto& p : lay.at("positions"))
      r.positions.push_back({p.at("object").get<int>(), p.at("axis").get<int>(), p.at("name").get<std::string>()});
    for (const auto& t : j.at("transforms"))
      r.state.transforms.push_back({t.at("tx").get<double>(), t.at("ty").get<double>(), t.at("rho").get<double>()});
    const auto& lib = j.at("library");
    r.state.library = LibrarySpec::polynomial(lib.at("variables").get<int>(), lib.at("degree").get<int>(),
                                              lib.at("constant").get<bool>());
    const int terms = r.state.library.size();
    const int d = lib.at("variables").get<int>();
    r.state.coeffs = CoefficientMatrix::zeros(terms, d);
    for (int a = 0; a < terms; ++a)
      for (int c = 0; c < d; ++c) {
        r.state.coeffs.xi(a, c) = j.at("xi").at(a).at(c).get<double>();
        r.state.coeffs.active(a, c) = j.at("active").at(a).at(c).get<int>() != 0;
      }
    for (const auto& mk : j.at("masks")) {
      MaskMatrix mm(terms, d);
      for (int a = 0; a < terms; ++a)
        for (int c = 0; c < d; ++c) mm(a, c) = mk.at(a).at(c).get<int>() != 0;
      r.masks.push_back(mm);
    }
    for (const auto& tr : j.at("traces")) {
      StageTrace st{tr.at("stage").get<std::string>(), {}};
      for (const auto& p : tr.at("points"))
        st.points.push_back({p.at("iteration").get<int>(),
                             {p.at("recon").get<double>(), p.at("dyn").get<double>(), p.at("int").get<double>(),
                              p.at("reg").get<double>(), p.at("total").get<double>()}});
      r.traces.push_back(std::move(st));
    }

    // Shapes come from the array header; each file must hold exactly that many values.
    const json header = io::read_json(dir / "assets/assets.json");
    auto read_array = [&](const std::string& role, int object, int& side) {
      for (const auto& a : header.at("arrays")) {
        if (a.at("role").get<std::string>() != role || a.at("object").get<int>() != object) continue;
        side = a.at("shape").at(0).get<int>();
        std::vector<double> v = io::read_f32(dir / "assets" / a.at("file").get<std::string>());
        if (static_cast<long>(v.size()) != static_cast<long>(side) * a.at("shape").at(1).get<int>())
          throw Error(ErrorKind::ShapeMismatch, "asset " + a.at("file").get<std::string>() + " does not match its shape");
        return v;
      }
      throw Error(ErrorKind::Io, "assets.json lists no " + role + " array for object " + std::to_string(object));
    };
    int h = 0;
    r.state.assets.background.px = read_array("background", -1, h);
    if (h != r.frame_size) throw Error(ErrorKind::ShapeMismatch, "background size differs from the frame size");
    r.state.assets.frame_size = h;
    r.state.assets.background.rows = r.state.assets.background.cols = h;
    for (int k = 0; k < r.objects; ++k) {
      ObjectAssets o;
      int wa = 0;
      o.intensity = read_array("intensity", k, o.size);
      o.alpha_logits = read_array("alpha_logits", k, wa);
      if (wa != o.size) throw Error(ErrorKind::ShapeMismatch, "sprite and alpha sizes differ");
      r.state.assets.objects.push_back(std::move(o));
    }

    const io::CsvTable in = io::read_csv(dir / j.at("input_csv").get<std::string>());
    r.state.input = Matrix::Zero(r.m - 2, d);
    int g = 0;
    for (int c = 0; c < d; ++c) {
      if (!r.input_mask[c]) continue;
      const auto col = in.values("g" + std::to_string(++g));
      if (static_cast<int>(col.size()) != r.m - 2) throw Error(ErrorKind::ShapeMismatch, "input.csv has the wrong length");
      for (int row = 0; row < r.m - 2; ++row) r.state.input(row, c) = col[row];
    }

    r.state.coords.assign(static_cast<std::size_t>(r.trajectories) * r.m * r.objects, Point2{});
    const auto paths = j.at("coords_csv").get<std::vector<std::string>>();
    const VideoData lay_v = r.layout();
    for (int t = 0; t < r.trajectories; ++t) {
      const io::CsvTable tab = io::read_csv(dir / paths.at(t));
      for (int k = 0; k < r.objects; ++k) {
        const auto xs = tab.values("xs_" + std::to_string(k + 1));
        const auto ys = tab.values("ys_" + std::to_string(k + 1));
        if (static_cast<int>(xs.size()) != r.m) throw Error(ErrorKind::ShapeMismatch, "coordinate CSV has the wrong length");
        for (int jj = 0; jj < r.m; ++jj) r.state.coord(lay_v, t, jj, k) = {xs[jj], ys[jj]};
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Validation, std::string("bad result.json: ") + e.what());
  }
  return r;
}

}  // namespace phyvid
