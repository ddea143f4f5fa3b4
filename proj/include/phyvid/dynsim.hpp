#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "phyvid/coordxform.hpp"
#include "phyvid/io.hpp"
#include "phyvid/physics.hpp"
#include "phyvid/sindy.hpp"
#include "phyvid/sprite_codec.hpp"

namespace phyvid {

enum class SystemKind { Smsd, Smtd, Tmtd, Duffing };

const char* to_string(SystemKind kind);
SystemKind parse_system_kind(const std::string& name);

/// A physical position variable: which object it belongs to and which image
/// axis (0 = x, 1 = y) it moves along.
struct PositionVar {
  int object = 0;
  int axis = 0;
  std::string name;
};

/// Mass-normalised second-order system written in state-space form
/// [positions..., velocities...]:
///   dq_i/dt = v_i
///   dv_i/dt = -sum_j K_ij q_j - c_i v_i - cubic_i q_i^3 + g_i(t)
struct SystemSpec {
  SystemKind kind = SystemKind::Smsd;
  int objects = 1;
  std::vector<PositionVar> positions;
  Matrix stiffness;              // K, 1/s^2
  std::vector<double> damping;   // c, 1/s
  std::vector<double> cubic;     // 1/(length^2 s^2)
  std::vector<bool> input_mask;  // per state equation
  // Multiplies the dataset's forcing amplitudes for this system.
  double forcing_scale = 1.0;

  static SystemSpec defaults(SystemKind kind);

  int position_count() const { return static_cast<int>(positions.size()); }
  int state_dim() const { return 2 * position_count(); }
  int forced_count() const;
  std::vector<std::string> state_names() const;
  // Axes of object k that carry physics (the others stay static).
  std::vector<int> moving_axes(int object) const;

  void validate() const;
  void rhs(std::span<const double> x, std::span<double> out) const;
  DynamicsModel model() const;

  /// Ground-truth equations expressed in `library`; throws InexpressibleTruth
  /// when a true term is missing from it.
  CoefficientMatrix true_coefficients(const LibrarySpec& library) const;

  nlohmann::json to_json() const;
  static SystemSpec from_json(const nlohmann::json& j);
};

/// Forcing samples [m x forced equations], shared by all trajectories of a dataset.
struct InputSignal {
  Matrix values;
  double dt = 0.0;

  // [m x state_dim] with zero columns for unforced equations.
  Matrix expand(const std::vector<bool>& input_mask) const;
};

enum class InputKind { Zero, Sine, TwoSine };

const char* to_string(InputKind kind);
InputKind parse_input_kind(const std::string& name);

struct InputParams {
  double a1 = 3.0;
  double w1 = 2.0 * 3.141592653589793 * 0.35;
  double a2 = 2.0;
  double w2 = 2.0 * 3.141592653589793 * 0.8;
  double phase = 1.0;
};

/// Synthesised forcing with each column's temporal mean subtracted. Column 0
/// is exactly a1 sin(w1 t) + a2 sin(w2 t + phase) (or a single sine for
/// Sine); further columns use seed-drawn phases and stretched frequencies so
/// that forced axes are not driven identically.
InputSignal make_input(InputKind kind, const InputParams& params, int m, double dt, std::uint64_t seed,
                       int columns = 1);

struct Trajectory {
  Matrix states;  // m x d, positions then velocities
  double dt = 0.0;
  Vector initial;
};

/// RK4 integration of the true system; throws SimulationDiverged naming the step.
Trajectory simulate(const SystemSpec& spec, const Vector& ic, const InputSignal& input, double dt, int m);

/// Place each object at its physical position (one Point2 per object; static
/// axes carry 0) through its transform and composite. Throws OutOfFrame when a
/// sprite's footprint [c - w/2, c + w/2] leaves [0, H] on either axis.
Image render(std::span<const Point2> physical, const SceneAssets& assets,
             std::span<const FrameTransform> mapping);

/// i.i.d. Gaussian pixel noise, clamped to [0,1]. Deterministic in `seed`.
Image add_noise(const Image& frame, double variance, std::uint64_t seed);

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

/// Synthetic ground-truth appearance: smooth background plus shaded disks.
SceneAssets make_assets(int frame_size, int sprite_size, int objects, std::uint64_t seed);

struct DatasetConfig {
  int frame_size = 64;
  int sprite_size = 16;
  double dt = 0.02;
  int frames = 500;
  int trajectories = 3;
  double noise_variance = 0.0;
  double motion_fraction = 0.6;
  InputKind input_kind = InputKind::TwoSine;
  InputParams input;
  bool write_raw = true;
};

struct TrajectoryRecord {
  std::string frames_dir;  // relative to the dataset root
  std::string truth_csv;
  std::vector<double> initial_condition;
};

struct DatasetManifest {
  std::filesystem::path root;
  SystemSpec system;
  DatasetConfig config;
  std::uint64_t seed = 0;
  std::string background_path;
  std::vector<std::string> sprite_paths;
  std::vector<std::string> alpha_paths;
  std::vector<FrameTransform> transforms;  // generation-time mapping per object
  std::vector<TrajectoryRecord> trajectories;

  static constexpr const char* kSchema = "phyvid.manifest/1";

  nlohmann::json to_json() const;
  static DatasetManifest load(const std::filesystem::path& dir);

  std::filesystem::path frame_path(int traj, int frame, bool raw = false) const;
  std::vector<Image> load_frames(int traj, bool raw = false) const;
  SceneAssets load_assets() const;
  io::CsvTable load_truth(int traj) const;
};

/// Simulate, render and write a dataset under `out_dir`: manifest.json,
/// frames/trajNNN/frame_NNNNN.png (+ .f32), truth/trajNNN.csv, assets/.
/// All trajectories share one input signal and differ in initial condition.
DatasetManifest generate_dataset(const SystemSpec& spec, int n_traj, const DatasetConfig& config,
                                 std::uint64_t seed, const std::filesystem::path& out_dir);

}  // namespace phyvid
