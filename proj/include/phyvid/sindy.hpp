#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace phyvid {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using MaskMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Polynomial candidate library over `variables` state entries. Terms are
/// monomials in graded lexicographic order: the constant, then degree 1 in
/// variable order, then degree 2 with the first variable's exponent
/// descending, and so on. For (q, v) at degree 2 this is [1, q, v, q^2, qv, v^2].
struct LibrarySpec {
  int variables = 0;
  int degree = 3;
  bool include_constant = true;
  std::vector<std::vector<int>> terms;

  static LibrarySpec polynomial(int variables, int degree, bool include_constant = true);

  int size() const { return static_cast<int>(terms.size()); }
  int find(const std::vector<int>& exponents) const;  // -1 when absent
  int total_degree(int term) const;
  std::string term_name(int term, std::span<const std::string> names) const;
};

/// Xi is [terms x equations]; entries outside `active` are held at exactly 0.
struct CoefficientMatrix {
  Matrix xi;
  MaskMatrix active;

  static CoefficientMatrix zeros(int terms, int equations);
  void apply_mask();
  int active_count() const { return static_cast<int>(active.count()); }
};

// ---------------------------------------------------------------- derivatives

struct Derivative {
  Matrix rates;    // (m-2) x d
  int first = 1;   // first interior index covered
  int last = 0;    // last interior index covered (inclusive)
};

/// Central difference (X[j+1] - X[j-1]) / (2 dt) on the interior rows.
Derivative central_difference(const Matrix& x, double dt);

/// First-order state-space view of a position series Q [m x P]:
/// state rows j = 1..m-2 are [q_j, v_j] with v_j the central difference of q,
/// and their rates are [v_j, (q_{j+1} - 2 q_j + q_{j-1}) / dt^2].
struct StateSpaceData {
  Matrix states;  // (m-2) x 2P
  Matrix rates;   // (m-2) x 2P
};

StateSpaceData state_space_from_positions(const Matrix& positions, double dt);

// Pull back dL/dstates and dL/drates to dL/dpositions [m x P].
Matrix state_space_vjp(const Matrix& d_states, const Matrix& d_rates, double dt);

// -------------------------------------------------------------------- library

Matrix build_library(const Matrix& states, const LibrarySpec& spec);
void library_row(std::span<const double> state, const LibrarySpec& spec, std::span<double> out);

// Adds sum_t w[t] * d theta_t / d state into grad (size = variables).
void library_row_vjp(std::span<const double> state, const LibrarySpec& spec,
                     std::span<const double> w, std::span<double> grad);

// ------------------------------------------------------------------- residual

struct ResidualResult {
  double loss = 0.0;  // mean of squared entries
  Matrix residual;    // rates - (Theta Xi + G)
};

ResidualResult dynamics_residual(const Matrix& rates, const Matrix& theta, const Matrix& xi,
                                 const Matrix& input);

// Smoothed l_1/2 penalty: sum over active entries of (xi^2 + eps^2)^(1/4) - eps^(1/2).
double l_half_reg(const Matrix& xi, double eps, const MaskMatrix& active);
Matrix l_half_reg_grad(const Matrix& xi, double eps, const MaskMatrix& active);

// ------------------------------------------------------------------- sparsity

/// Zero every active |xi| < tau and drop it from the mask. The mask only
/// shrinks. Throws EmptyEquation if an equation without input loses all terms.
MaskMatrix sequential_threshold(CoefficientMatrix& coeffs, double tau,
                                const std::vector<bool>& input_mask);

/// Ordinary least squares of (rates - input) on the active library columns,
/// per equation. Throws RankDeficient listing the offending columns when the
/// column-normalised active block has condition number above `max_condition`.
Matrix refit_active(const Matrix& theta, const Matrix& rates, const Matrix& input,
                    const MaskMatrix& active, double max_condition = 1e10);

/// Joint least squares for Xi and a dense zero-mean input shared across all
/// trajectories. `time_index[row]` names the sample time of each row; every
/// time must appear the same number of times. Equations with input_mask false
/// get no input. Returned input is [times x equations].
struct InputFit {
  Matrix xi;
  Matrix input;
};

InputFit fit_with_unknown_input(const Matrix& theta, const Matrix& rates,
                                std::span<const int> time_index, int times,
                                const MaskMatrix& active, const std::vector<bool>& input_mask,
                                double max_condition = 1e10);

// Expand a [times x d] input to one row per data row.
Matrix expand_input(const Matrix& input, std::span<const int> time_index);

/// Sequentially thresholded joint fit: fit all terms, threshold, refit on the
/// survivors, for `rounds` rounds (stopping early once the mask is stable).
struct SparseFit {
  CoefficientMatrix coeffs;
  Matrix input;
  int rounds_used = 0;
};

SparseFit sparse_identify(const Matrix& theta, const Matrix& rates, std::span<const int> time_index,
                          int times, const std::vector<bool>& input_mask, double tau, int rounds);

// ------------------------------------------------------------------- emission

std::string format_equations(const LibrarySpec& spec, const CoefficientMatrix& coeffs,
                             std::span<const std::string> names, const std::vector<bool>& input_mask,
                             int precision = 4);

nlohmann::json equations_to_json(const LibrarySpec& spec, const CoefficientMatrix& coeffs,
                                 std::span<const std::string> names,
                                 const std::vector<bool>& input_mask);

}  // namespace phyvid
