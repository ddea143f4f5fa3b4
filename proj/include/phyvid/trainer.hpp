#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "phyvid/coordxform.hpp"
#include "phyvid/dynsim.hpp"
#include "phyvid/kernels.hpp"
#include "phyvid/sindy.hpp"
#include "phyvid/sprite_codec.hpp"

namespace phyvid {

// ------------------------------------------------------------------- config

struct LearningRates {
  double assets = 1e-2;       // background and sprite intensities
  double alpha = 5e-2;        // sprite alpha logits
  double coords = 1e-2;       // pre-training
  double coords_late = 1e-3;  // every later stage
  double shift = 1e-3;        // transform translation
  double scale = 0.0;         // transform log-scale; 0 keeps the initial gauge
  double xi = 1e-2;
  double input = 1e-2;
  double decay_to = 0.02;     // fraction of each rate left at the end of a stage
};

struct StageSchedule {
  int pretrain = 1500;
  int joint = 2000;
  int rounds = 2;
  int between_rounds = 400;
  int refine = 1000;
};

struct TrainConfig {
  double lambda1 = 1e-5;  // L_dyn
  double lambda2 = 1.0;   // L_int
  double lambda3 = 1e-9;  // L_reg
  LearningRates lr;
  StageSchedule stages;

  int library_degree = 3;
  bool library_constant = true;
  double threshold = 0.1;
  double reg_epsilon = 1e-4;

  double temperature = 0.5;
  InitOptions init;
  int objects = 0;  // 0: take the count from the manifest
  bool raw_frames = false;
  bool freeze_transform = false;  // pin transforms at identity (ablation)
  int trace_every = 10;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  std::string to_toml() const;

  static TrainConfig from_toml(const std::string& text, const std::string& origin = "<string>");
  static TrainConfig from_toml_file(const std::filesystem::path& path);
};

// -------------------------------------------------------------- model state

/// Video frames of all trajectories plus the layout the losses need. The
/// position list (which object axes carry physics) is filled in by discovery.
struct VideoData {
  std::vector<Image> frames;  // [traj * m + frame]
  int trajectories = 0;
  int m = 0;
  int frame_size = 0;
  int sprite_size = 0;
  double dt = 0.0;
  int objects = 0;
  std::vector<PositionVar> positions;
  std::vector<bool> input_mask;
  std::vector<std::string> state_names;

  // Batch layout and target statistics of the two image losses; see prepare().
  std::vector<kernels::BatchItem> recon_items;
  std::vector<kernels::BatchItem> int_items;
  kernels::TargetStats recon_stats;
  kernels::TargetStats int_stats;

  int state_dim() const { return 2 * static_cast<int>(positions.size()); }
  int position_count() const { return static_cast<int>(positions.size()); }
  const Image& frame(int traj, int j) const { return frames[static_cast<std::size_t>(traj) * m + j]; }
  std::span<const Image> trajectory_frames(int traj) const {
    return {frames.data() + static_cast<std::size_t>(traj) * m, static_cast<std::size_t>(m)};
  }

  // Forced velocity rows and generic state names for the current positions.
  void set_positions(std::vector<PositionVar> p);
  void prepare();

  static VideoData from_manifest(const DatasetManifest& manifest, bool raw, int objects = 0);
};

struct ModelState {
  SceneAssets assets;
  std::vector<Point2> coords;  // [(traj * m + frame) * objects + k], spatial
  std::vector<FrameTransform> transforms;
  LibrarySpec library;
  CoefficientMatrix coeffs;
  Matrix input;  // (m-2) x d on interior times 1..m-2; unforced columns stay 0

  Point2& coord(const VideoData& v, int traj, int j, int k) {
    return coords[(static_cast<std::size_t>(traj) * v.m + j) * v.objects + k];
  }
  const Point2& coord(const VideoData& v, int traj, int j, int k) const {
    return coords[(static_cast<std::size_t>(traj) * v.m + j) * v.objects + k];
  }

  /// Physical positions [m x P] of one trajectory.
  Matrix physical_positions(const VideoData& v, int traj) const;
};

struct ModelGrad {
  AssetGrad assets;
  std::vector<Point2> coords;
  std::vector<TransformGrad> transforms;
  Matrix xi;
  Matrix input;

  static ModelGrad zeros_like(const ModelState& s);
};

struct LossWeights {
  double dyn = 0.0;
  double integ = 0.0;
  double reg = 0.0;
  double reg_epsilon = 1e-4;
};

struct LossTerms {
  double recon = 0.0;
  double dyn = 0.0;
  double integ = 0.0;
  double reg = 0.0;
  double total = 0.0;
};

/// All four loss terms and (when `grad` is set) the gradient of the weighted
/// total with respect to every trainable. Terms with zero weight are skipped.
/// Throws NumericalFailure naming the offending groups on a non-finite result.
LossTerms total_loss_grad(const VideoData& data, const ModelState& state, const LossWeights& weights,
                          ModelGrad* grad);

// ---------------------------------------------------------------- optimiser

/// Adaptive-moment update with bias correction, one instance per parameter group.
class Adam {
 public:
  explicit Adam(std::size_t n = 0, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void reset(std::size_t n);
  void tick() { ++t_; }
  // Update to subtract from parameter i for gradient g.
  double delta(std::size_t i, double g, double lr);

 private:
  double beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<double> m_, v_;
};

// ---------------------------------------------------------------- discovery

struct TracePoint {
  int iteration = 0;
  LossTerms terms;
};

struct StageTrace {
  std::string stage;
  std::vector<TracePoint> points;
};

struct DiscoveryResult {
  ModelState state;
  TrainConfig config;
  std::string data_dir;
  int trajectories = 0;
  int m = 0;
  int frame_size = 0;
  double dt = 0.0;
  int objects = 0;
  std::vector<PositionVar> positions;
  std::vector<bool> input_mask;
  std::vector<std::string> state_names;
  std::vector<StageTrace> traces;
  std::vector<MaskMatrix> masks;  // active set after each thresholding round
  nlohmann::json provenance;      // command line and config source, echoed verbatim

  static constexpr const char* kSchema = "phyvid.result/1";

  VideoData layout() const;  // frame-less VideoData describing the result
  Matrix physical_positions(int traj) const;
  const StageTrace* trace(const std::string& stage) const;

  void save(const std::filesystem::path& dir) const;
  static DiscoveryResult load(const std::filesystem::path& dir);
};

/// Four-stage schedule: (i) pre-training of assets and coordinates on the
/// reconstruction loss, (ii) joint training of every trainable under the full
/// loss, (iii) thresholding rounds with continued training, (iv) refinement
/// with the mask frozen and no regulariser. Deterministic for a given input.
DiscoveryResult discover(const DatasetManifest& manifest, const TrainConfig& config);

/// Stage (i) and (ii) only, with the transforms pinned at identity so the
/// physics terms act on pixel coordinates directly.
DiscoveryResult discover_without_transform(const DatasetManifest& manifest, const TrainConfig& config);

// ------------------------------------------------------------ gradient check

struct GradcheckGroup {
  std::string name;
  double max_rel_error = 0.0;
  int checked = 0;
  bool pass = false;
};

struct GradcheckReport {
  std::uint64_t seed = 0;
  double tolerance = 1e-4;
  std::vector<GradcheckGroup> groups;
  bool pass() const;
  nlohmann::json to_json() const;
};

/// Central finite differences against the analytic gradient of the total loss
/// on a 16x16, 8-frame, two-object scene. `corrupt` names a group whose
/// analytic gradient is deliberately perturbed before comparison.
GradcheckReport gradient_check(std::uint64_t seed, const std::string& corrupt = "");

}  // namespace phyvid
