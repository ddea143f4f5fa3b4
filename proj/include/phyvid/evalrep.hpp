#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "phyvid/dynsim.hpp"
#include "phyvid/trainer.hpp"

namespace phyvid {

struct Alignment {
  double a = 1.0;
  double b = 0.0;
  double rmse = 0.0;
};

/// Least-squares (a, b) minimising |a*est + b - truth|^2. Throws
/// DegenerateSeries when `est` is constant and ShapeMismatch on unequal or
/// too-short inputs.
Alignment align_affine(std::span<const double> est, std::span<const double> truth);

double pearson(std::span<const double> x, std::span<const double> y);

enum class SupportMode { Strict, Soft };

struct VariableAlignment {
  std::string learned;
  std::string truth;
  Alignment fit;
  double r2 = 0.0;
};

struct CoefficientError {
  std::string equation;  // truth state name
  std::string term;      // truth term name
  double truth = 0.0;
  double learned = 0.0;  // after the gauge correction, 0 when inactive
  double rel_error = 0.0;
};

struct InputMatch {
  std::string equation;  // truth state name
  int learned_equation = 0;
  int truth_column = 0;  // 1-based g column of the truth table
  Alignment fit;
  double correlation = 0.0;
};

struct TrajectoryFit {
  std::vector<double> rmse;  // per position, after alignment
  std::vector<double> r2;
  std::vector<int> best_permutation;
};

struct EvalReport {
  static constexpr const char* kSchema = "phyvid.eval/1";

  std::string system;
  SupportMode mode = SupportMode::Strict;
  std::vector<int> permutation;  // learned position i -> truth position permutation[i]
  bool identity_consistent = true;
  std::vector<VariableAlignment> alignment;
  std::vector<TrajectoryFit> trajectories;

  double precision = 0.0;
  double recall = 0.0;
  int true_positives = 0;
  int false_positives = 0;
  int false_negatives = 0;
  std::vector<std::string> flagged;  // small active terms excused in soft mode
  bool support_exact = false;

  std::vector<CoefficientError> coefficients;
  double max_coeff_error = 0.0;
  std::vector<InputMatch> inputs;
  double min_input_correlation = 1.0;
  double min_r2 = 1.0;

  std::string equations_learned;  // in the learned gauge
  std::string equations_aligned;  // mapped into the truth variables
  CoefficientMatrix aligned;
  LibrarySpec truth_library;
  nlohmann::json losses;

  nlohmann::json to_json() const;
};

/// Compares a discovery result with the dataset's ground truth. Learned
/// positions are matched to true ones by the permutation with the largest
/// total correlation, each variable is aligned affinely, and coefficients are
/// mapped into the truth basis through the per-variable scale a:
///   xi_truth[t, k] = xi[t, k] * a_k / prod_i a_i^(e_i(t)).
/// Linear terms within one variable are unaffected; cross and cubic terms are.
/// Throws InexpressibleTruth when the library cannot hold the true equations.
EvalReport equation_metrics(const DiscoveryResult& result, const DatasetManifest& manifest,
                            SupportMode mode = SupportMode::Strict);

struct NoiseExperiment {
  DiscoveryResult result;
  EvalReport report;
};

/// Regenerates the dataset with pixel noise of the given variance (same seed
/// and configuration) under `work_dir`, rediscovers and evaluates.
NoiseExperiment run_noise_experiment(const DatasetManifest& clean, const TrainConfig& config, double variance,
                                     const std::filesystem::path& work_dir);

struct AblationResult {
  std::vector<TracePoint> full_joint;     // stage (ii) of the full model
  std::vector<TracePoint> ablated_joint;  // stage (ii) with transforms pinned
  double full_final_dyn = 0.0;
  double ablated_final_dyn = 0.0;
  double full_dyn_drop = 0.0;        // 1 - last/first over stage (ii)
  double ablated_recon_drop = 0.0;   // 1 - last/first over stages (i)-(ii)
  // Residual energy over rate energy of each run's final state, which removes
  // the unit difference between pixel and physical coordinates.
  double full_relative_residual = 0.0;
  double ablated_relative_residual = 0.0;
  bool ablated_diverged = false;
  std::string ablated_error;

  nlohmann::json to_json() const;
};

/// Runs discovery with the spatial-physical transform pinned at identity so
/// the physics terms act on pixel coordinates, and compares its derivative
/// loss trace with the full model's (`full` is computed when null).
AblationResult run_ablation_no_spt(const DatasetManifest& manifest, const TrainConfig& config,
                                   const DiscoveryResult* full = nullptr);

/// Writes `<run>/report/`: eval.json, equations.txt, aligned_trajNNN.csv
/// (interior rows only), trajectory.svg and input.svg. Byte-identical on rerun.
void emit_report(const std::filesystem::path& run_dir);

/// Loads the run's result and its dataset.
std::pair<DiscoveryResult, DatasetManifest> load_run(const std::filesystem::path& run_dir);

}  // namespace phyvid
