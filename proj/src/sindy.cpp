#include "phyvid/sindy.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "phyvid/error.hpp"

namespace phyvid {

namespace {

void graded_terms(int var, int remaining, std::vector<int>& cur,
                  std::vector<std::vector<int>>& out) {
  const int d = static_cast<int>(cur.size());
  if (var == d - 1) {
    cur[var] = remaining;
    out.push_back(cur);
    return;
  }
  for (int e = remaining; e >= 0; --e) {
    cur[var] = e;
    graded_terms(var + 1, remaining - e, cur, out);
  }
  cur[var] = 0;
}

std::string shape_of(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

std::string describe_term(const LibrarySpec& spec, int term) {
  std::string s = "#" + std::to_string(term) + "(";
  for (int i = 0; i < spec.variables; ++i) s += (i ? "," : "") + std::to_string(spec.terms[term][i]);
  return s + ")";
}

// Least squares on an already-selected block, with a condition guard on the
// column-normalised matrix.
Vector solve_block(const Matrix& a, const Vector& y, const LibrarySpec* spec,
                   const std::vector<int>& cols, double max_condition) {
  const Eigen::Index k = a.cols();
  Vector norms = a.colwise().norm().transpose();
  Matrix scaled = a;
  for (Eigen::Index c = 0; c < k; ++c) {
    if (norms[c] > 0.0) scaled.col(c) /= norms[c];
  }
  Eigen::JacobiSVD<Matrix> svd(scaled, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& sv = svd.singularValues();
  const double smax = sv[0];
  const double smin = sv[k - 1];
  if (!(smin > 0.0) || smax / smin > max_condition) {
    std::ostringstream os;
    os << "active block condition number " << (smin > 0.0 ? smax / smin : INFINITY)
       << " exceeds " << max_condition << "; offending columns:";
    const Vector weak = svd.matrixV().col(k - 1);
    for (Eigen::Index c = 0; c < k; ++c) {
      if (std::abs(weak[c]) > 0.1 || norms[c] == 0.0) {
        os << ' ' << (spec ? describe_term(*spec, cols[c]) : "#" + std::to_string(cols[c]));
      }
    }
    throw Error(ErrorKind::RankDeficient, os.str());
  }
  Vector beta = svd.solve(y);
  for (Eigen::Index c = 0; c < k; ++c) {
    if (norms[c] > 0.0) beta[c] /= norms[c];
  }
  return beta;
}

std::vector<int> active_rows(const MaskMatrix& active, int eq) {
  std::vector<int> idx;
  for (int t = 0; t < active.rows(); ++t)
    if (active(t, eq)) idx.push_back(t);
  return idx;
}

Matrix select_columns(const Matrix& theta, const std::vector<int>& cols) {
  Matrix a(theta.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) a.col(static_cast<Eigen::Index>(c)) = theta.col(cols[c]);
  return a;
}

// Per-time grouping used by the shared-input projection.
struct TimeGroups {
  std::vector<int> index;
  int times = 0;
  int per_time = 0;

  // y - mean_over_same_time(y) + mean_over_all(y), column-wise.
  Matrix project(const Matrix& y) const {
    Matrix sums = Matrix::Zero(times, y.cols());
    for (Eigen::Index r = 0; r < y.rows(); ++r) sums.row(index[r]) += y.row(r);
    sums /= per_time;
    const Eigen::RowVectorXd grand = y.colwise().mean();
    Matrix out = y;
    for (Eigen::Index r = 0; r < y.rows(); ++r) out.row(r) += grand - sums.row(index[r]);
    return out;
  }

  Vector time_means(const Vector& y) const {
    Vector sums = Vector::Zero(times);
    for (Eigen::Index r = 0; r < y.size(); ++r) sums[index[r]] += y[r];
    return sums / per_time;
  }
};

TimeGroups make_groups(std::span<const int> time_index, int times, Eigen::Index rows) {
  if (static_cast<Eigen::Index>(time_index.size()) != rows)
    throw Error(ErrorKind::ShapeMismatch, "time index length does not match data rows");
  TimeGroups g{{time_index.begin(), time_index.end()}, times, 0};
  std::vector<int> count(times, 0);
  for (int t : time_index) {
    if (t < 0 || t >= times) throw Error(ErrorKind::ShapeMismatch, "time index out of range");
    ++count[t];
  }
  g.per_time = count.empty() ? 0 : count[0];
  for (int c : count) {
    if (c != g.per_time || c == 0)
      throw Error(ErrorKind::ShapeMismatch, "every time must appear equally often");
  }
  return g;
}

}  // namespace

// --------------------------------------------------------------- LibrarySpec

LibrarySpec LibrarySpec::polynomial(int variables, int degree, bool include_constant) {
  if (variables < 1 || degree < 0)
    throw Error(ErrorKind::Validation, "library needs >= 1 variable and degree >= 0");
  LibrarySpec spec{variables, degree, include_constant, {}};
  std::vector<int> cur(variables, 0);
  for (int k = include_constant ? 0 : 1; k <= degree; ++k) graded_terms(0, k, cur, spec.terms);
  return spec;
}

int LibrarySpec::find(const std::vector<int>& exponents) const {
  for (int t = 0; t < size(); ++t)
    if (terms[t] == exponents) return t;
  return -1;
}

int LibrarySpec::total_degree(int term) const {
  int s = 0;
  for (int e : terms[term]) s += e;
  return s;
}

std::string LibrarySpec::term_name(int term, std::span<const std::string> names) const {
  std::string out;
  for (int i = 0; i < variables; ++i) {
    const int e = terms[term][i];
    if (e == 0) continue;
    if (!out.empty()) out += "·";
    out += names[i];
    if (e > 1) out += "^" + std::to_string(e);
  }
  return out.empty() ? "1" : out;
}

CoefficientMatrix CoefficientMatrix::zeros(int terms, int equations) {
  return {Matrix::Zero(terms, equations), MaskMatrix::Constant(terms, equations, true)};
}

void CoefficientMatrix::apply_mask() {
  xi = active.select(xi, Matrix::Zero(xi.rows(), xi.cols()));
}

// --------------------------------------------------------------- derivatives

Derivative central_difference(const Matrix& x, double dt) {
  const Eigen::Index m = x.rows();
  if (m < 3) throw Error(ErrorKind::TooShort, "central difference needs >= 3 samples, got " + std::to_string(m));
  Derivative d;
  d.rates = (x.bottomRows(m - 2) - x.topRows(m - 2)) / (2.0 * dt);
  d.first = 1;
  d.last = static_cast<int>(m) - 2;
  return d;
}

StateSpaceData state_space_from_positions(const Matrix& q, double dt) {
  const Eigen::Index m = q.rows();
  const Eigen::Index p = q.cols();
  const Derivative vel = central_difference(q, dt);
  StateSpaceData out;
  out.states.resize(m - 2, 2 * p);
  out.rates.resize(m - 2, 2 * p);
  out.states.leftCols(p) = q.middleRows(1, m - 2);
  out.states.rightCols(p) = vel.rates;
  out.rates.leftCols(p) = vel.rates;
  out.rates.rightCols(p) =
      (q.bottomRows(m - 2) - 2.0 * q.middleRows(1, m - 2) + q.topRows(m - 2)) / (dt * dt);
  return out;
}

Matrix state_space_vjp(const Matrix& d_states, const Matrix& d_rates, double dt) {
  const Eigen::Index n = d_states.rows();
  const Eigen::Index p = d_states.cols() / 2;
  const Eigen::Index m = n + 2;
  Matrix dq = Matrix::Zero(m, p);
  // velocity entries feed both the state (right half) and the position rate (left half)
  const Matrix dv = (d_states.rightCols(p) + d_rates.leftCols(p)) / (2.0 * dt);
  dq.bottomRows(n) += dv;
  dq.topRows(n) -= dv;
  dq.middleRows(1, n) += d_states.leftCols(p);
  const Matrix da = d_rates.rightCols(p) / (dt * dt);
  dq.bottomRows(n) += da;
  dq.middleRows(1, n) -= 2.0 * da;
  dq.topRows(n) += da;
  return dq;
}

// -------------------------------------------------------------------- library

void library_row(std::span<const double> state, const LibrarySpec& spec, std::span<double> out) {
  const int d = spec.variables;
  double pw[16][8];
  for (int i = 0; i < d; ++i) {
    pw[i][0] = 1.0;
    for (int k = 1; k <= spec.degree; ++k) pw[i][k] = pw[i][k - 1] * state[i];
  }
  for (int t = 0; t < spec.size(); ++t) {
    double v = 1.0;
    const auto& e = spec.terms[t];
    for (int i = 0; i < d; ++i) v *= pw[i][e[i]];
    out[t] = v;
  }
}

void library_row_vjp(std::span<const double> state, const LibrarySpec& spec,
                     std::span<const double> w, std::span<double> grad) {
  const int d = spec.variables;
  double pw[16][8];
  for (int i = 0; i < d; ++i) {
    pw[i][0] = 1.0;
    for (int k = 1; k <= spec.degree; ++k) pw[i][k] = pw[i][k - 1] * state[i];
  }
  for (int t = 0; t < spec.size(); ++t) {
    if (w[t] == 0.0) continue;
    const auto& e = spec.terms[t];
    for (int l = 0; l < d; ++l) {
      if (e[l] == 0) continue;
      double v = e[l] * pw[l][e[l] - 1];
      for (int i = 0; i < d; ++i)
        if (i != l) v *= pw[i][e[i]];
      grad[l] += w[t] * v;
    }
  }
}

Matrix build_library(const Matrix& states, const LibrarySpec& spec) {
  if (states.cols() != spec.variables)
    throw Error(ErrorKind::ShapeMismatch, "states " + shape_of(states) + " vs library over " +
                                              std::to_string(spec.variables) + " variables");
  if (spec.variables > 16 || spec.degree > 7)
    throw Error(ErrorKind::Validation, "library limited to 16 variables and degree 7");
  // Row-major scratch so each row is contiguous for library_row.
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> out(states.rows(), spec.size());
  std::vector<double> row(spec.variables);
  for (Eigen::Index r = 0; r < states.rows(); ++r) {
    for (int i = 0; i < spec.variables; ++i) row[i] = states(r, i);
    library_row(row, spec, {out.row(r).data(), static_cast<std::size_t>(spec.size())});
  }
  return out;
}

// ------------------------------------------------------------------- residual

ResidualResult dynamics_residual(const Matrix& rates, const Matrix& theta, const Matrix& xi,
                                 const Matrix& input) {
  if (theta.rows() != rates.rows() || theta.cols() != xi.rows() || xi.cols() != rates.cols() ||
      input.rows() != rates.rows() || input.cols() != rates.cols()) {
    throw Error(ErrorKind::ShapeMismatch, "rates " + shape_of(rates) + ", theta " + shape_of(theta) +
                                              ", xi " + shape_of(xi) + ", input " + shape_of(input));
  }
  ResidualResult r;
  r.residual = rates - theta * xi - input;
  r.loss = r.residual.size() ? r.residual.squaredNorm() / static_cast<double>(r.residual.size()) : 0.0;
  return r;
}

double l_half_reg(const Matrix& xi, double eps, const MaskMatrix& active) {
  const double offset = std::sqrt(eps);
  double s = 0.0;
  for (Eigen::Index c = 0; c < xi.cols(); ++c)
    for (Eigen::Index t = 0; t < xi.rows(); ++t)
      if (active(t, c)) s += std::pow(xi(t, c) * xi(t, c) + eps * eps, 0.25) - offset;
  return s;
}

Matrix l_half_reg_grad(const Matrix& xi, double eps, const MaskMatrix& active) {
  Matrix g = Matrix::Zero(xi.rows(), xi.cols());
  for (Eigen::Index c = 0; c < xi.cols(); ++c) {
    for (Eigen::Index t = 0; t < xi.rows(); ++t) {
      const double x = xi(t, c);
      const double base = x * x + eps * eps;
      if (active(t, c) && base > 0.0) g(t, c) = 0.5 * x * std::pow(base, -0.75);
    }
  }
  return g;
}

// ------------------------------------------------------------------- sparsity

MaskMatrix sequential_threshold(CoefficientMatrix& coeffs, double tau,
                                const std::vector<bool>& input_mask) {
  if (!(tau > 0.0)) throw Error(ErrorKind::Validation, "threshold must be positive");
  coeffs.active = coeffs.active && (coeffs.xi.array().abs() >= tau);
  coeffs.apply_mask();
  for (Eigen::Index c = 0; c < coeffs.xi.cols(); ++c) {
    const bool forced = c < static_cast<Eigen::Index>(input_mask.size()) && input_mask[c];
    if (!forced && !coeffs.active.col(c).any()) {
      throw Error(ErrorKind::EmptyEquation, "equation " + std::to_string(c) +
                                                " has no active terms and no input after threshold " +
                                                std::to_string(tau));
    }
  }
  return coeffs.active;
}

Matrix refit_active(const Matrix& theta, const Matrix& rates, const Matrix& input,
                    const MaskMatrix& active, double max_condition) {
  if (theta.rows() != rates.rows() || input.rows() != rates.rows() || input.cols() != rates.cols() ||
      active.rows() != theta.cols() || active.cols() != rates.cols()) {
    throw Error(ErrorKind::ShapeMismatch, "refit shapes do not agree");
  }
  Matrix xi = Matrix::Zero(theta.cols(), rates.cols());
  for (Eigen::Index eq = 0; eq < rates.cols(); ++eq) {
    const auto cols = active_rows(active, static_cast<int>(eq));
    if (cols.empty()) continue;
    const Vector beta = solve_block(select_columns(theta, cols), rates.col(eq) - input.col(eq),
                                    nullptr, cols, max_condition);
    for (std::size_t c = 0; c < cols.size(); ++c) xi(cols[c], eq) = beta[static_cast<Eigen::Index>(c)];
  }
  return xi;
}

Matrix expand_input(const Matrix& input, std::span<const int> time_index) {
  Matrix out(static_cast<Eigen::Index>(time_index.size()), input.cols());
  for (std::size_t r = 0; r < time_index.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = input.row(time_index[r]);
  return out;
}

InputFit fit_with_unknown_input(const Matrix& theta, const Matrix& rates,
                                std::span<const int> time_index, int times,
                                const MaskMatrix& active, const std::vector<bool>& input_mask,
                                double max_condition) {
  if (theta.rows() != rates.rows() || active.rows() != theta.cols() || active.cols() != rates.cols())
    throw Error(ErrorKind::ShapeMismatch, "fit shapes do not agree");
  const TimeGroups groups = make_groups(time_index, times, rates.rows());
  InputFit fit{Matrix::Zero(theta.cols(), rates.cols()), Matrix::Zero(times, rates.cols())};
  for (Eigen::Index eq = 0; eq < rates.cols(); ++eq) {
    const bool forced = eq < static_cast<Eigen::Index>(input_mask.size()) && input_mask[eq];
    const auto cols = active_rows(active, static_cast<int>(eq));
    Vector residual = rates.col(eq);
    if (!cols.empty()) {
      const Matrix a = select_columns(theta, cols);
      Vector beta;
      if (forced) {
        beta = solve_block(groups.project(a), groups.project(rates.col(eq)), nullptr, cols, max_condition);
      } else {
        beta = solve_block(a, rates.col(eq), nullptr, cols, max_condition);
      }
      for (std::size_t c = 0; c < cols.size(); ++c) fit.xi(cols[c], eq) = beta[static_cast<Eigen::Index>(c)];
      residual -= a * beta;
    }
    if (forced) {
      Vector g = groups.time_means(residual);
      g.array() -= g.mean();
      fit.input.col(eq) = g;
    }
  }
  return fit;
}

SparseFit sparse_identify(const Matrix& theta, const Matrix& rates, std::span<const int> time_index,
                          int times, const std::vector<bool>& input_mask, double tau, int rounds) {
  SparseFit out;
  out.coeffs = CoefficientMatrix::zeros(static_cast<int>(theta.cols()), static_cast<int>(rates.cols()));
  InputFit fit = fit_with_unknown_input(theta, rates, time_index, times, out.coeffs.active, input_mask);
  out.coeffs.xi = fit.xi;
  out.input = fit.input;
  for (int r = 0; r < rounds; ++r) {
    const MaskMatrix before = out.coeffs.active;
    sequential_threshold(out.coeffs, tau, input_mask);
    out.rounds_used = r + 1;
    fit = fit_with_unknown_input(theta, rates, time_index, times, out.coeffs.active, input_mask);
    out.coeffs.xi = fit.xi;
    out.input = fit.input;
    if ((before == out.coeffs.active).all()) break;
  }
  return out;
}

// ------------------------------------------------------------------- emission

std::string format_equations(const LibrarySpec& spec, const CoefficientMatrix& coeffs,
                             std::span<const std::string> names, const std::vector<bool>& input_mask,
                             int precision) {
  std::ostringstream os;
  int input_no = 0;
  for (Eigen::Index eq = 0; eq < coeffs.xi.cols(); ++eq) {
    os << "d" << names[eq] << "/dt =";
    bool first = true;
    for (int t = 0; t < spec.size(); ++t) {
      if (!coeffs.active(t, eq)) continue;
      const double c = coeffs.xi(t, eq);
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.*g", precision, std::abs(c));
      os << (first ? (c < 0 ? " -" : " ") : (c < 0 ? " - " : " + ")) << buf;
      if (spec.total_degree(t) > 0) os << "·" << spec.term_name(t, names);
      first = false;
    }
    if (eq < static_cast<Eigen::Index>(input_mask.size()) && input_mask[eq]) {
      os << (first ? " " : " + ") << "g" << ++input_no << "(t)";
      first = false;
    }
    if (first) os << " 0";
    os << '\n';
  }
  return os.str();
}

nlohmann::json equations_to_json(const LibrarySpec& spec, const CoefficientMatrix& coeffs,
                                 std::span<const std::string> names,
                                 const std::vector<bool>& input_mask) {
  nlohmann::json eqs = nlohmann::json::array();
  for (Eigen::Index eq = 0; eq < coeffs.xi.cols(); ++eq) {
    nlohmann::json terms = nlohmann::json::array();
    for (int t = 0; t < spec.size(); ++t) {
      if (!coeffs.active(t, eq)) continue;
      terms.push_back({{"exponents", spec.terms[t]},
                       {"name", spec.term_name(t, names)},
                       {"coefficient", coeffs.xi(t, eq)}});
    }
    eqs.push_back({{"state", names[eq]},
                   {"input", eq < static_cast<Eigen::Index>(input_mask.size()) && input_mask[eq]},
                   {"terms", terms}});
  }
  return eqs;
}

}  // namespace phyvid
