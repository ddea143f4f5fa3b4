#include "phyvid/evalrep.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include "phyvid/error.hpp"
#include "phyvid/io.hpp"

namespace phyvid {

namespace fs = std::filesystem;
using nlohmann::json;

Alignment align_affine(std::span<const double> est, std::span<const double> truth) {
  if (est.size() != truth.size()) throw Error(ErrorKind::ShapeMismatch, "align_affine: series lengths differ");
  const std::size_t n = est.size();
  if (n < 2) throw Error(ErrorKind::ShapeMismatch, "align_affine: need at least 2 samples");
  const double me = std::accumulate(est.begin(), est.end(), 0.0) / n;
  const double mt = std::accumulate(truth.begin(), truth.end(), 0.0) / n;
  double see = 0.0, set = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    see += (est[i] - me) * (est[i] - me);
    set += (est[i] - me) * (truth[i] - mt);
    scale = std::max(scale, std::abs(est[i]));
  }
  if (see <= 1e-24 * std::max(1.0, scale * scale) * n)
    throw Error(ErrorKind::DegenerateSeries, "align_affine: estimated series is constant");
  Alignment al;
  al.a = set / see;
  al.b = mt - al.a * me;
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) ss += std::pow(al.a * est[i] + al.b - truth[i], 2);
  al.rmse = std::sqrt(ss / n);
  return al;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

namespace {

double r_squared(std::span<const double> pred, std::span<const double> truth) {
  const double mt = std::accumulate(truth.begin(), truth.end(), 0.0) / truth.size();
  double res = 0.0, tot = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    res += std::pow(pred[i] - truth[i], 2);
    tot += std::pow(truth[i] - mt, 2);
  }
  return tot > 0.0 ? 1.0 - res / tot : (res == 0.0 ? 1.0 : -std::numeric_limits<double>::infinity());
}

std::string traj_name(int t) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "traj%03d", t);
  return buf;
}

// Permutation of learned positions onto truth positions maximising the summed
// |correlation| over the given trajectories.
std::vector<int> best_permutation(const std::vector<Matrix>& learned, const std::vector<Matrix>& truth,
                                  std::span<const int> trajs) {
  const int p = static_cast<int>(learned[0].cols());
  std::vector<std::vector<double>> score(p, std::vector<double>(p, 0.0));
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < p; ++j) {
      std::vector<double> a, b;
      for (int t : trajs) {
        a.insert(a.end(), learned[t].col(i).data(), learned[t].col(i).data() + learned[t].rows());
        b.insert(b.end(), truth[t].col(j).data(), truth[t].col(j).data() + truth[t].rows());
      }
      score[i][j] = std::abs(pearson(a, b));
    }
  std::vector<int> perm(p), best;
  std::iota(perm.begin(), perm.end(), 0);
  double best_score = -1.0;
  do {
    double s = 0.0;
    for (int i = 0; i < p; ++i) s += score[i][perm[i]];
    if (s > best_score + 1e-12) {
      best_score = s;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

std::vector<double> truth_column(const io::CsvTable& tab, const std::string& name) {
  const auto v = tab.values(name);
  if (v.empty()) throw Error(ErrorKind::Io, "truth table lacks column '" + name + "'");
  return v;
}

json loss_summary(const DiscoveryResult& r) {
  json j = json::object();
  for (const auto& tr : r.traces) {
    if (tr.points.empty()) continue;
    const auto& first = tr.points.front().terms;
    const auto& last = tr.points.back().terms;
    j[tr.stage] = {{"first", {{"recon", first.recon}, {"dyn", first.dyn}, {"int", first.integ}, {"total", first.total}}},
                   {"last", {{"recon", last.recon}, {"dyn", last.dyn}, {"int", last.integ}, {"total", last.total}}}};
  }
  return j;
}

}  // namespace

json EvalReport::to_json() const {
  json j;
  j["schema"] = kSchema;
  j["system"] = system;
  j["mode"] = mode == SupportMode::Strict ? "strict" : "soft";
  j["permutation"] = permutation;
  j["identity_consistent"] = identity_consistent;
  j["alignment"] = json::array();
  for (const auto& a : alignment)
    j["alignment"].push_back(
        {{"learned", a.learned}, {"truth", a.truth}, {"a", a.fit.a}, {"b", a.fit.b}, {"rmse", a.fit.rmse}, {"r2", a.r2}});
  j["trajectories"] = json::array();
  for (const auto& t : trajectories)
    j["trajectories"].push_back({{"rmse", t.rmse}, {"r2", t.r2}, {"best_permutation", t.best_permutation}});
  j["support"] = {{"precision", precision},     {"recall", recall},
                  {"true_positives", true_positives}, {"false_positives", false_positives},
                  {"false_negatives", false_negatives}, {"flagged", flagged},
                  {"exact", support_exact}};
  j["coefficients"] = json::array();
  for (const auto& c : coefficients)
    j["coefficients"].push_back({{"equation", c.equation},
                                 {"term", c.term},
                                 {"truth", c.truth},
                                 {"learned", c.learned},
                                 {"rel_error", c.rel_error}});
  j["max_coeff_error"] = max_coeff_error;
  j["inputs"] = json::array();
  for (const auto& in : inputs)
    j["inputs"].push_back({{"equation", in.equation},
                           {"correlation", in.correlation},
                           {"a", in.fit.a},
                           {"b", in.fit.b},
                           {"rmse", in.fit.rmse}});
  j["min_input_correlation"] = min_input_correlation;
  j["min_r2"] = min_r2;
  j["gauge"] = "xi_truth[t,k] = xi[t,k] * a_k / prod_i a_i^e_i(t), with a from per-variable affine alignment";
  j["losses"] = losses;
  return j;
}

EvalReport equation_metrics(const DiscoveryResult& r, const DatasetManifest& man, SupportMode mode) {
  const SystemSpec& sys = man.system;
  const int p = static_cast<int>(r.positions.size());
  const int pt = sys.position_count();
  if (p != pt)
    throw Error(ErrorKind::ShapeMismatch, "result has " + std::to_string(p) + " moving position(s) but the " +
                                              to_string(sys.kind) + " truth has " + std::to_string(pt));
  const int T = r.trajectories;
  if (T != static_cast<int>(man.trajectories.size()))
    throw Error(ErrorKind::ShapeMismatch, "trajectory count differs between result and dataset");
  const int m = r.m;
  const int d = 2 * p;
  const auto tnames = sys.state_names();

  EvalReport rep;
  rep.system = to_string(sys.kind);
  rep.mode = mode;
  rep.losses = loss_summary(r);

  std::vector<Matrix> learned(T), truth(T);
  std::vector<io::CsvTable> tables(T);
  for (int t = 0; t < T; ++t) {
    learned[t] = r.physical_positions(t);
    tables[t] = man.load_truth(t);
    truth[t].resize(m, p);
    for (int i = 0; i < p; ++i) {
      const auto col = truth_column(tables[t], tnames[i]);
      if (static_cast<int>(col.size()) != m) throw Error(ErrorKind::ShapeMismatch, "truth length differs from result");
      for (int j = 0; j < m; ++j) truth[t](j, i) = col[j];
    }
  }

  std::vector<int> all(T);
  std::iota(all.begin(), all.end(), 0);
  rep.permutation = best_permutation(learned, truth, all);
  for (int t = 0; t < T; ++t) {
    const int one[1] = {t};
    TrajectoryFit tf;
    tf.best_permutation = best_permutation(learned, truth, one);
    if (tf.best_permutation != rep.permutation) rep.identity_consistent = false;
    rep.trajectories.push_back(std::move(tf));
  }

  // Per-variable alignment pooled over trajectories.
  std::vector<double> a(d, 1.0);
  for (int i = 0; i < p; ++i) {
    const int ti = rep.permutation[i];
    std::vector<double> est, tru;
    for (int t = 0; t < T; ++t) {
      est.insert(est.end(), learned[t].col(i).data(), learned[t].col(i).data() + m);
      tru.insert(tru.end(), truth[t].col(ti).data(), truth[t].col(ti).data() + m);
    }
    VariableAlignment va{r.state_names[i], tnames[ti], align_affine(est, tru), 0.0};
    std::vector<double> pred(est.size());
    for (std::size_t k = 0; k < est.size(); ++k) pred[k] = va.fit.a * est[k] + va.fit.b;
    va.r2 = r_squared(pred, tru);
    a[i] = a[p + i] = va.fit.a;
    rep.alignment.push_back(va);
  }
  rep.min_r2 = 1.0;
  for (int t = 0; t < T; ++t)
    for (int i = 0; i < p; ++i) {
      const int ti = rep.permutation[i];
      std::vector<double> pred(m), tru(m);
      for (int j = 0; j < m; ++j) {
        pred[j] = rep.alignment[i].fit.a * learned[t](j, i) + rep.alignment[i].fit.b;
        tru[j] = truth[t](j, ti);
      }
      double ss = 0.0;
      for (int j = 0; j < m; ++j) ss += std::pow(pred[j] - tru[j], 2);
      rep.trajectories[t].rmse.push_back(std::sqrt(ss / m));
      rep.trajectories[t].r2.push_back(r_squared(pred, tru));
      rep.min_r2 = std::min(rep.min_r2, rep.trajectories[t].r2.back());
    }

  // Learned state index -> truth state index.
  std::vector<int> smap(d);
  for (int i = 0; i < p; ++i) {
    smap[i] = rep.permutation[i];
    smap[p + i] = p + rep.permutation[i];
  }

  const LibrarySpec& lib = r.state.library;
  rep.truth_library = LibrarySpec::polynomial(d, lib.degree, lib.include_constant);
  const CoefficientMatrix truth_xi = sys.true_coefficients(rep.truth_library);
  rep.aligned = CoefficientMatrix::zeros(rep.truth_library.size(), d);
  for (int term = 0; term < lib.size(); ++term) {
    std::vector<int> e(d, 0);
    double denom = 1.0;
    for (int i = 0; i < d; ++i) {
      e[smap[i]] = lib.terms[term][i];
      denom *= std::pow(a[i], lib.terms[term][i]);
    }
    const int tt = rep.truth_library.find(e);
    if (tt < 0) throw Error(ErrorKind::InexpressibleTruth, "learned term has no counterpart in the truth library");
    for (int k = 0; k < d; ++k) {
      rep.aligned.active(tt, smap[k]) = r.state.coeffs.active(term, k);
      rep.aligned.xi(tt, smap[k]) = r.state.coeffs.xi(term, k) * a[k] / denom;
    }
  }
  rep.aligned.apply_mask();

  // Support metrics over (term, equation) entries.
  double largest = 0.0;
  for (Eigen::Index i = 0; i < rep.aligned.xi.size(); ++i)
    if (rep.aligned.active.data()[i]) largest = std::max(largest, std::abs(rep.aligned.xi.data()[i]));
  int predicted = 0;
  for (int k = 0; k < d; ++k)
    for (int tt = 0; tt < rep.truth_library.size(); ++tt) {
      const bool on = rep.aligned.active(tt, k);
      const bool real = truth_xi.xi(tt, k) != 0.0;
      if (on && !real && mode == SupportMode::Soft && std::abs(rep.aligned.xi(tt, k)) < 0.01 * largest) {
        rep.flagged.push_back(tnames[k] + ":" + rep.truth_library.term_name(tt, tnames));
        continue;
      }
      if (on) ++predicted;
      if (on && real) ++rep.true_positives;
      if (on && !real) ++rep.false_positives;
      if (!on && real) ++rep.false_negatives;
    }
  const int real_count = static_cast<int>((truth_xi.xi.array() != 0.0).count());
  // No active term means no false claim: precision is vacuously 1.
  rep.precision = predicted > 0 ? static_cast<double>(rep.true_positives) / predicted : 1.0;
  rep.recall = real_count > 0 ? static_cast<double>(rep.true_positives) / real_count : 1.0;
  rep.support_exact = rep.false_positives == 0 && rep.false_negatives == 0;

  rep.max_coeff_error = 0.0;
  for (int k = 0; k < d; ++k)
    for (int tt = 0; tt < rep.truth_library.size(); ++tt) {
      if (truth_xi.xi(tt, k) == 0.0) continue;
      CoefficientError ce;
      ce.equation = tnames[k];
      ce.term = rep.truth_library.term_name(tt, tnames);
      ce.truth = truth_xi.xi(tt, k);
      ce.learned = rep.aligned.active(tt, k) ? rep.aligned.xi(tt, k) : 0.0;
      ce.rel_error = std::abs(ce.learned - ce.truth) / std::abs(ce.truth);
      rep.max_coeff_error = std::max(rep.max_coeff_error, ce.rel_error);
      rep.coefficients.push_back(ce);
    }

  // Inputs: learned rows are interior times 1..m-2; truth columns g1.. follow
  // the forced equations in order.
  std::vector<int> forced;
  for (int k = 0; k < d; ++k)
    if (sys.input_mask[k]) forced.push_back(k);
  rep.min_input_correlation = 1.0;
  for (int k = 0; k < d; ++k) {
    if (!r.input_mask[k]) continue;
    const int tk = smap[k];
    const auto it = std::find(forced.begin(), forced.end(), tk);
    if (it == forced.end()) continue;
    const auto g = truth_column(tables[0], "g" + std::to_string(it - forced.begin() + 1));
    std::vector<double> est(m - 2), tru(m - 2);
    for (int j = 0; j < m - 2; ++j) {
      est[j] = r.state.input(j, k);
      tru[j] = g[j + 1];
    }
    InputMatch im;
    im.equation = tnames[tk];
    im.learned_equation = k;
    im.truth_column = static_cast<int>(it - forced.begin()) + 1;
    im.correlation = pearson(est, tru);
    try {
      im.fit = align_affine(est, tru);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::DegenerateSeries) throw;
      im.fit = {0.0, 0.0, std::numeric_limits<double>::infinity()};
    }
    rep.min_input_correlation = std::min(rep.min_input_correlation, im.correlation);
    rep.inputs.push_back(im);
  }

  rep.equations_learned = format_equations(lib, r.state.coeffs, r.state_names, r.input_mask);
  std::vector<bool> tmask(d, false);
  for (int k = 0; k < d; ++k) tmask[smap[k]] = r.input_mask[k];
  rep.equations_aligned = format_equations(rep.truth_library, rep.aligned, tnames, tmask);
  return rep;
}

NoiseExperiment run_noise_experiment(const DatasetManifest& clean, const TrainConfig& config, double variance,
                                     const fs::path& work_dir) {
  if (!(variance >= 0.0)) throw Error(ErrorKind::Validation, "noise variance must be non-negative");
  DatasetConfig dc = clean.config;
  dc.noise_variance = variance;
  const DatasetManifest noisy = generate_dataset(clean.system, static_cast<int>(clean.trajectories.size()), dc,
                                                 clean.seed, work_dir);
  NoiseExperiment out;
  out.result = discover(noisy, config);
  out.report = equation_metrics(out.result, noisy);
  return out;
}

namespace {

// |dX/dt - Theta Xi - g|^2 / |dX/dt|^2 over all trajectories.
double relative_residual(const DiscoveryResult& r) {
  const VideoData v = r.layout();
  double res = 0.0, tot = 0.0;
  for (int t = 0; t < r.trajectories; ++t) {
    const auto ss = state_space_from_positions(r.state.physical_positions(v, t), r.dt);
    const Matrix theta = build_library(ss.states, r.state.library);
    const Matrix resid = ss.rates - theta * r.state.coeffs.xi - r.state.input;
    res += resid.squaredNorm();
    tot += ss.rates.squaredNorm();
  }
  return tot > 0.0 ? res / tot : 0.0;
}

}  // namespace

json AblationResult::to_json() const {
  auto trace = [](const std::vector<TracePoint>& pts) {
    json a = json::array();
    for (const auto& p : pts) a.push_back({{"iteration", p.iteration}, {"dyn", p.terms.dyn}, {"recon", p.terms.recon}});
    return a;
  };
  return {{"schema", "phyvid.ablation/1"},
          {"full_final_dyn", full_final_dyn},
          {"ablated_final_dyn", ablated_final_dyn},
          {"ratio", full_final_dyn > 0 ? ablated_final_dyn / full_final_dyn : 0.0},
          {"full_dyn_drop", full_dyn_drop},
          {"ablated_recon_drop", ablated_recon_drop},
          {"full_relative_residual", full_relative_residual},
          {"ablated_relative_residual", ablated_relative_residual},
          {"ablated_diverged", ablated_diverged},
          {"ablated_error", ablated_error},
          {"full_joint", trace(full_joint)},
          {"ablated_joint", trace(ablated_joint)}};
}

AblationResult run_ablation_no_spt(const DatasetManifest& manifest, const TrainConfig& config,
                                   const DiscoveryResult* full) {
  if (manifest.system.objects != 1)
    throw Error(ErrorKind::Validation, "the transform ablation expects a single-object dataset");
  AblationResult out;
  DiscoveryResult computed;
  if (!full) {
    computed = discover(manifest, config);
    full = &computed;
  }
  const StageTrace* fj = full->trace("joint");
  if (!fj || fj->points.empty()) throw Error(ErrorKind::Validation, "full result has no joint-stage trace");
  out.full_joint = fj->points;
  out.full_final_dyn = fj->points.back().terms.dyn;
  out.full_dyn_drop = 1.0 - fj->points.back().terms.dyn / fj->points.front().terms.dyn;

  // The derivative loss is reported on the same footing as the full model:
  // the value at the end of stage (ii).
  DiscoveryResult ab;
  try {
    ab = discover_without_transform(manifest, config);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::NumericalFailure) throw;
    out.ablated_diverged = true;
    out.ablated_error = e.what();
    out.ablated_final_dyn = std::numeric_limits<double>::infinity();
    out.full_relative_residual = relative_residual(*full);
    out.ablated_relative_residual = std::numeric_limits<double>::infinity();
    return out;
  }
  const StageTrace* aj = ab.trace("joint");
  const StageTrace* ap = ab.trace("pretrain");
  out.ablated_joint = aj->points;
  out.ablated_final_dyn = aj->points.back().terms.dyn;
  const double recon0 = (ap && !ap->points.empty() ? ap->points.front() : aj->points.front()).terms.recon;
  out.ablated_recon_drop = 1.0 - aj->points.back().terms.recon / recon0;
  out.full_relative_residual = relative_residual(*full);
  out.ablated_relative_residual = relative_residual(ab);
  return out;
}

// ------------------------------------------------------------------- report

std::pair<DiscoveryResult, DatasetManifest> load_run(const fs::path& run_dir) {
  if (!fs::exists(run_dir / "result.json"))
    throw Error(ErrorKind::Io, "no result.json in run directory " + run_dir.string());
  DiscoveryResult r = DiscoveryResult::load(run_dir);
  fs::path data = r.data_dir;
  if (data.is_relative()) data = run_dir / data;
  DatasetManifest man = DatasetManifest::load(data);
  return {std::move(r), std::move(man)};
}

namespace {

struct Series {
  std::vector<double> y;
  bool dashed = false;
  const char* color = "#1f77b4";
};

// One panel: shared x range, solid and dashed polylines, min/max labels.
void svg_panel(std::ostringstream& os, double x0, double y0, double w, double h, const std::vector<double>& xs,
               const std::vector<Series>& series, const std::string& title) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& s : series)
    for (double v : s.y) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  if (!(hi > lo)) {
    lo -= 1.0;
    hi += 1.0;
  }
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;
  char buf[128];
  std::snprintf(buf, sizeof buf, "<rect x=\"%.1f\" y=\"%.1f\" width=\"%.1f\" height=\"%.1f\" fill=\"none\" stroke=\"#999\"/>\n",
                x0, y0, w, h);
  os << buf;
  os << "<text x=\"" << x0 + 4 << "\" y=\"" << y0 + 14 << "\" font-size=\"12\" font-family=\"sans-serif\">" << title
     << "</text>\n";
  const double t0 = xs.front(), t1 = xs.back();
  for (const auto& s : series) {
    os << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.2\""
       << (s.dashed ? " stroke-dasharray=\"5,3\"" : "") << " points=\"";
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double px = x0 + (xs[i] - t0) / (t1 - t0) * w;
      const double py = y0 + h - (s.y[i] - lo) / (hi - lo) * h;
      std::snprintf(buf, sizeof buf, "%s%.2f,%.2f", i ? " " : "", px, py);
      os << buf;
    }
    os << "\"/>\n";
  }
}

std::string svg_begin(double w, double h) {
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w
     << " " << h << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  return os.str();
}

}  // namespace

void emit_report(const fs::path& run_dir) {
  auto [r, man] = load_run(run_dir);
  const EvalReport rep = equation_metrics(r, man);
  const fs::path out = run_dir / "report";
  fs::create_directories(out);
  io::write_json(out / "eval.json", rep.to_json());

  std::ostringstream eq;
  eq << "# learned coordinates\n" << rep.equations_learned << "\n# aligned to ground-truth variables\n"
     << rep.equations_aligned;
  io::write_text(out / "equations.txt", eq.str());

  const int p = static_cast<int>(r.positions.size());
  const int m = r.m;
  const auto tnames = man.system.state_names();
  std::vector<double> times(m - 2);
  for (int j = 1; j <= m - 2; ++j) times[j - 1] = j * r.dt;

  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};
  const double pw = 420, ph = 150, gap = 10;
  std::ostringstream traj_svg;
  traj_svg << svg_begin(gap + p * (pw + gap), gap + r.trajectories * (ph + gap));

  for (int t = 0; t < r.trajectories; ++t) {
    const Matrix q = r.physical_positions(t);
    const auto tab = man.load_truth(t);
    io::CsvTable csv;
    csv.header = {"t"};
    std::vector<std::vector<double>> cols = {times};
    for (int i = 0; i < p; ++i) {
      const int ti = rep.permutation[i];
      const auto& al = rep.alignment[i].fit;
      const auto tq = tab.values(tnames[ti]);
      const auto tv = tab.values(tnames[p + ti]);
      std::vector<double> cq(m - 2), lq(m - 2), cv(m - 2), lv(m - 2);
      for (int j = 1; j <= m - 2; ++j) {
        cq[j - 1] = tq[j];
        lq[j - 1] = al.a * q(j, i) + al.b;
        cv[j - 1] = tv[j];
        lv[j - 1] = al.a * (q(j + 1, i) - q(j - 1, i)) / (2.0 * r.dt);
      }
      for (auto&& [name, col] : {std::pair{tnames[ti], cq}, {tnames[ti] + "_learned", lq},
                                 {tnames[p + ti], cv}, {tnames[p + ti] + "_learned", lv}}) {
        csv.header.push_back(name);
        cols.push_back(col);
      }
      svg_panel(traj_svg, gap + i * (pw + gap), gap + t * (ph + gap), pw, ph, times,
                {{cq, false, colors[i % 4]}, {lq, true, "#000000"}}, traj_name(t) + " " + tnames[ti]);
    }
    for (const auto& in : rep.inputs) {
      const auto g = tab.values("g" + std::to_string(in.truth_column));
      std::vector<double> cg(m - 2), lg(m - 2);
      for (int j = 0; j < m - 2; ++j) {
        cg[j] = g[j + 1];
        lg[j] = in.fit.a * r.state.input(j, in.learned_equation) + in.fit.b;
      }
      csv.header.push_back("g_" + in.equation);
      cols.push_back(cg);
      csv.header.push_back("g_" + in.equation + "_learned");
      cols.push_back(lg);
    }
    for (int j = 0; j < m - 2; ++j) {
      std::vector<double> row;
      for (const auto& c : cols) row.push_back(c[j]);
      csv.rows.push_back(std::move(row));
    }
    io::write_csv(out / ("aligned_" + traj_name(t) + ".csv"), csv);
  }
  traj_svg << "</svg>\n";
  io::write_text(out / "trajectory.svg", traj_svg.str());

  // Inputs are shared across trajectories; plot them once from trajectory 0.
  const auto aligned0 = io::read_csv(out / ("aligned_" + traj_name(0) + ".csv"));
  const int panels = std::max<int>(1, static_cast<int>(rep.inputs.size()));
  std::ostringstream in_svg;
  in_svg << svg_begin(gap + pw * 1.5 + gap, gap + panels * (ph + gap));
  for (std::size_t i = 0; i < rep.inputs.size(); ++i) {
    const std::string name = "g_" + rep.inputs[i].equation;
    svg_panel(in_svg, gap, gap + i * (ph + gap), pw * 1.5, ph, times,
              {{aligned0.values(name), false, colors[i % 4]}, {aligned0.values(name + "_learned"), true, "#000000"}},
              "input " + rep.inputs[i].equation);
  }
  in_svg << "</svg>\n";
  io::write_text(out / "input.svg", in_svg.str());
}

}  // namespace phyvid
