#include "phyvid/dynsim.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "phyvid/error.hpp"

namespace phyvid {

namespace fs = std::filesystem;
using nlohmann::json;

const char* to_string(SystemKind kind) {
  switch (kind) {
    case SystemKind::Smsd: return "SMSD";
    case SystemKind::Smtd: return "SMTD";
    case SystemKind::Tmtd: return "TMTD";
    case SystemKind::Duffing: return "DUFFING";
  }
  return "?";
}

static std::string upper(std::string s) {
  for (char& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

SystemKind parse_system_kind(const std::string& name) {
  const std::string u = upper(name);
  if (u == "SMSD") return SystemKind::Smsd;
  if (u == "SMTD") return SystemKind::Smtd;
  if (u == "TMTD") return SystemKind::Tmtd;
  if (u == "DUFFING") return SystemKind::Duffing;
  throw Error(ErrorKind::Validation, "unknown system '" + name + "' (expected SMSD, SMTD, TMTD or DUFFING)");
}

SystemSpec SystemSpec::defaults(SystemKind kind) {
  SystemSpec s;
  s.kind = kind;
  switch (kind) {
    case SystemKind::Smsd:
      s.objects = 1;
      s.positions = {{0, 0, "x"}};
      s.stiffness = Matrix::Constant(1, 1, 5.0);
      s.damping = {0.5};
      s.cubic = {0.0};
      break;
    case SystemKind::Smtd:
      s.objects = 1;
      s.positions = {{0, 0, "x"}, {0, 1, "y"}};
      s.stiffness = Matrix::Zero(2, 2);
      s.stiffness(0, 0) = 5.0;
      s.stiffness(1, 1) = 9.0;
      s.damping = {0.0, 0.0};
      s.cubic = {0.0, 0.0};
      break;
    case SystemKind::Tmtd:
      // v1' = -5 x1 + 2 (x2 - x1),  v2' = -2 (x2 - x1)
      s.objects = 2;
      s.positions = {{0, 0, "x1"}, {1, 0, "x2"}};
      s.stiffness.resize(2, 2);
      s.stiffness << 7.0, -2.0, -2.0, 2.0;
      s.damping = {0.0, 0.0};
      s.cubic = {0.0, 0.0};
      break;
    case SystemKind::Duffing:
      s.objects = 1;
      s.positions = {{0, 0, "x"}};
      s.stiffness = Matrix::Constant(1, 1, 1.0);
      s.damping = {0.2};
      s.cubic = {5.0};
      // At full forcing the motion is stiff enough that difference quotients
      // at dt = 0.02 bias the small linear coefficient by about 1%.
      s.forcing_scale = 0.5;
      break;
  }
  const int p = s.position_count();
  s.input_mask.assign(2 * p, false);
  for (int i = 0; i < p; ++i) s.input_mask[p + i] = true;
  return s;
}

int SystemSpec::forced_count() const {
  return static_cast<int>(std::count(input_mask.begin(), input_mask.end(), true));
}

std::vector<std::string> SystemSpec::state_names() const {
  std::vector<std::string> names;
  for (const auto& p : positions) names.push_back(p.name);
  for (const auto& p : positions) names.push_back("v" + p.name);
  return names;
}

std::vector<int> SystemSpec::moving_axes(int object) const {
  std::vector<int> axes;
  for (const auto& p : positions)
    if (p.object == object) axes.push_back(p.axis);
  return axes;
}

void SystemSpec::validate() const {
  const int p = position_count();
  if (objects < 1 || objects > 2) throw Error(ErrorKind::Validation, "object count must be 1 or 2");
  if (p == 0) throw Error(ErrorKind::Validation, "system has no position variables");
  if (!(forcing_scale >= 0.0)) throw Error(ErrorKind::Validation, "forcing scale must be non-negative");
  for (const auto& pv : positions) {
    if (pv.object < 0 || pv.object >= objects || pv.axis < 0 || pv.axis > 1)
      throw Error(ErrorKind::Validation, "position '" + pv.name + "' has a bad object/axis");
  }
  for (int i = 0; i < p; ++i)
    for (int j = i + 1; j < p; ++j)
      if (positions[i].object == positions[j].object && positions[i].axis == positions[j].axis)
        throw Error(ErrorKind::Validation, "duplicate position variable");
  if (stiffness.rows() != p || stiffness.cols() != p)
    throw Error(ErrorKind::Validation, "stiffness matrix must be " + std::to_string(p) + "x" + std::to_string(p));
  if (static_cast<int>(damping.size()) != p || static_cast<int>(cubic.size()) != p)
    throw Error(ErrorKind::Validation, "damping/cubic need one entry per position");
  if (static_cast<int>(input_mask.size()) != 2 * p)
    throw Error(ErrorKind::Validation, "input mask needs one entry per state equation");
  for (int i = 0; i < p; ++i)
    if (!(stiffness(i, i) > 0.0)) throw Error(ErrorKind::Validation, "stiffness values must be positive");
}

void SystemSpec::rhs(std::span<const double> x, std::span<double> out) const {
  const int p = position_count();
  for (int i = 0; i < p; ++i) {
    const double q = x[i];
    double acc = -damping[i] * x[p + i] - cubic[i] * q * q * q;
    for (int j = 0; j < p; ++j) acc -= stiffness(i, j) * x[j];
    out[i] = x[p + i];
    out[p + i] = acc;
  }
}

DynamicsModel SystemSpec::model() const {
  SystemSpec copy = *this;
  return DynamicsModel::exact(
      [copy](std::span<const double> x, std::span<double> out) { copy.rhs(x, out); }, state_dim());
}

CoefficientMatrix SystemSpec::true_coefficients(const LibrarySpec& library) const {
  const int p = position_count();
  const int d = state_dim();
  if (library.variables != d)
    throw Error(ErrorKind::ShapeMismatch, "library has " + std::to_string(library.variables) +
                                              " variables, system state has " + std::to_string(d));
  CoefficientMatrix c = CoefficientMatrix::zeros(library.size(), d);
  c.active.setConstant(false);
  const auto names = state_names();
  auto set = [&](int eq, std::vector<int> e, double value) {
    if (value == 0.0) return;
    const int t = library.find(e);
    if (t < 0) {
      std::string term;
      for (int i = 0; i < d; ++i)
        if (e[i]) term += names[i] + (e[i] > 1 ? "^" + std::to_string(e[i]) : "");
      throw Error(ErrorKind::InexpressibleTruth, "true term " + term + " is not in the library");
    }
    c.xi(t, eq) += value;
    c.active(t, eq) = true;
  };
  auto unit = [d](int i, int power = 1) {
    std::vector<int> e(d, 0);
    e[i] = power;
    return e;
  };
  for (int i = 0; i < p; ++i) {
    set(i, unit(p + i), 1.0);
    for (int j = 0; j < p; ++j) set(p + i, unit(j), -stiffness(i, j));
    set(p + i, unit(p + i), -damping[i]);
    set(p + i, unit(i, 3), -cubic[i]);
  }
  return c;
}

json SystemSpec::to_json() const {
  json j;
  j["kind"] = to_string(kind);
  j["objects"] = objects;
  j["positions"] = json::array();
  for (const auto& p : positions) j["positions"].push_back({{"object", p.object}, {"axis", p.axis}, {"name", p.name}});
  j["stiffness"] = json::array();
  for (int r = 0; r < stiffness.rows(); ++r) {
    json row = json::array();
    for (int c = 0; c < stiffness.cols(); ++c) row.push_back(stiffness(r, c));
    j["stiffness"].push_back(row);
  }
  j["damping"] = damping;
  j["cubic"] = cubic;
  j["input_mask"] = input_mask;
  j["forcing_scale"] = forcing_scale;
  return j;
}

SystemSpec SystemSpec::from_json(const json& j) {
  try {
    SystemSpec s;
    s.kind = parse_system_kind(j.at("kind").get<std::string>());
    s.objects = j.at("objects").get<int>();
    for (const auto& p : j.at("positions"))
      s.positions.push_back({p.at("object").get<int>(), p.at("axis").get<int>(), p.at("name").get<std::string>()});
    const auto& k = j.at("stiffness");
    const int n = static_cast<int>(k.size());
    s.stiffness.resize(n, n);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c) s.stiffness(r, c) = k.at(r).at(c).get<double>();
    s.damping = j.at("damping").get<std::vector<double>>();
    s.cubic = j.at("cubic").get<std::vector<double>>();
    s.input_mask = j.at("input_mask").get<std::vector<bool>>();
    s.forcing_scale = j.value("forcing_scale", 1.0);
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Validation, std::string("bad system spec: ") + e.what());
  }
}

Matrix InputSignal::expand(const std::vector<bool>& input_mask) const {
  Matrix g = Matrix::Zero(values.rows(), static_cast<Eigen::Index>(input_mask.size()));
  int col = 0;
  for (std::size_t e = 0; e < input_mask.size(); ++e) {
    if (!input_mask[e]) continue;
    if (col >= values.cols()) throw Error(ErrorKind::ShapeMismatch, "input has fewer columns than forced equations");
    g.col(static_cast<Eigen::Index>(e)) = values.col(col++);
  }
  if (col != values.cols()) throw Error(ErrorKind::ShapeMismatch, "input has more columns than forced equations");
  return g;
}

const char* to_string(InputKind kind) {
  switch (kind) {
    case InputKind::Zero: return "zero";
    case InputKind::Sine: return "sine";
    case InputKind::TwoSine: return "two_sine";
  }
  return "?";
}

InputKind parse_input_kind(const std::string& name) {
  if (name == "zero") return InputKind::Zero;
  if (name == "sine") return InputKind::Sine;
  if (name == "two_sine") return InputKind::TwoSine;
  throw Error(ErrorKind::Validation, "unknown input kind '" + name + "' (expected zero, sine or two_sine)");
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  // splitmix64 finaliser over a simple combination
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (a + 1) + 0xBF58476D1CE4E5B9ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

InputSignal make_input(InputKind kind, const InputParams& params, int m, double dt, std::uint64_t seed,
                       int columns) {
  if (m < 1) throw Error(ErrorKind::Validation, "input needs at least one sample");
  InputSignal in;
  in.dt = dt;
  in.values = Matrix::Zero(m, std::max(columns, 0));
  if (kind == InputKind::Zero) return in;
  for (int c = 0; c < columns; ++c) {
    double phase1 = 0.0, phase2 = params.phase, stretch = 1.0;
    if (c > 0) {
      std::mt19937_64 rng(mix_seed(seed, 0x1a, static_cast<std::uint64_t>(c)));
      std::uniform_real_distribution<double> u(0.0, 2.0 * std::numbers::pi);
      phase1 = u(rng);
      phase2 = u(rng);
      stretch = 1.0 + 0.3 * c;
    }
    for (int j = 0; j < m; ++j) {
      const double t = j * dt;
      double v = params.a1 * std::sin(stretch * params.w1 * t + phase1);
      if (kind == InputKind::TwoSine) v += params.a2 * std::sin(stretch * params.w2 * t + phase2);
      in.values(j, c) = v;
    }
    in.values.col(c).array() -= in.values.col(c).mean();
  }
  return in;
}

Trajectory simulate(const SystemSpec& spec, const Vector& ic, const InputSignal& input, double dt, int m) {
  if (!(dt > 0.0)) throw Error(ErrorKind::Validation, "dt must be positive");
  if (m < 1) throw Error(ErrorKind::Validation, "need at least one step");
  if (ic.size() != spec.state_dim())
    throw Error(ErrorKind::ShapeMismatch, "initial condition has " + std::to_string(ic.size()) +
                                              " entries, system state has " + std::to_string(spec.state_dim()));
  if (input.values.rows() < m)
    throw Error(ErrorKind::ShapeMismatch, "input has " + std::to_string(input.values.rows()) +
                                              " samples, need " + std::to_string(m));
  const Matrix g = input.expand(spec.input_mask);
  Trajectory tr;
  tr.dt = dt;
  tr.initial = ic;
  tr.states = rollout(ic, g, dt, m - 1, spec.model());
  return tr;
}

Image render(std::span<const Point2> physical, const SceneAssets& assets, std::span<const FrameTransform> mapping) {
  const int k_count = assets.object_count();
  if (static_cast<int>(physical.size()) != k_count || static_cast<int>(mapping.size()) != k_count)
    throw Error(ErrorKind::ShapeMismatch, "need one position and one transform per object");
  const int h = assets.background.rows;
  std::vector<Point2> spatial(k_count);
  for (int k = 0; k < k_count; ++k) {
    spatial[k] = to_spatial(physical[k], mapping[k]);
    const double half = 0.5 * assets.objects[k].size;
    for (int axis = 0; axis < 2; ++axis) {
      const double lo = spatial[k][axis] - half;
      const double hi = spatial[k][axis] + half;
      const double extent = axis == 0 ? assets.background.cols : h;
      if (!(lo >= 0.0 && hi <= extent)) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "object %d window [%.3f, %.3f] leaves the frame on axis %c", k, lo, hi,
                      axis == 0 ? 'x' : 'y');
        throw Error(ErrorKind::OutOfFrame, buf);
      }
    }
  }
  Image out = decode(spatial, assets);
  for (double& v : out.px) v = std::clamp(v, 0.0, 1.0);
  return out;
}

Image add_noise(const Image& frame, double variance, std::uint64_t seed) {
  if (variance < 0.0) throw Error(ErrorKind::Validation, "noise variance must be non-negative");
  Image out = frame;
  if (variance == 0.0) return out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, std::sqrt(variance));
  for (double& v : out.px) v = std::clamp(v + noise(rng), 0.0, 1.0);
  return out;
}

SceneAssets make_assets(int frame_size, int sprite_size, int objects, std::uint64_t seed) {
  SceneAssets a;
  a.frame_size = frame_size;
  a.background = Image(frame_size, frame_size);
  std::mt19937_64 rng(mix_seed(seed, 0xa55e7));
  std::uniform_real_distribution<double> u(0.0, 2.0 * std::numbers::pi);
  const double p1 = u(rng), p2 = u(rng);
  for (int r = 0; r < frame_size; ++r) {
    for (int c = 0; c < frame_size; ++c) {
      const double y = (r + 0.5) / frame_size, x = (c + 0.5) / frame_size;
      a.background(r, c) = 0.22 + 0.08 * x + 0.05 * std::sin(2.0 * std::numbers::pi * y + p1) +
                           0.03 * std::sin(2.0 * std::numbers::pi * (x + y) + p2);
    }
  }
  const double radius = 0.5 * sprite_size - 1.5;
  const double centre = 0.5 * sprite_size;
  for (int k = 0; k < objects; ++k) {
    ObjectAssets o = ObjectAssets::blank(sprite_size);
    const double base = k == 0 ? 0.92 : 0.72;
    for (int i = 0; i < sprite_size; ++i) {
      for (int j = 0; j < sprite_size; ++j) {
        const double dy = i + 0.5 - centre, dx = j + 0.5 - centre;
        const double rr = std::hypot(dx, dy);
        // Off-centre highlight for object 0, a darker ring for object 1.
        double s = base - 0.25 * (rr / radius) * (rr / radius) - 0.04 * (dx + dy) / radius;
        if (k == 1 && std::abs(rr - 0.55 * radius) < 1.0) s -= 0.25;
        o.intensity[i * sprite_size + j] = std::clamp(s, 0.0, 1.0);
        o.alpha_logits[i * sprite_size + j] = std::clamp(4.0 * (radius - rr), -8.0, 8.0);
      }
    }
    a.objects.push_back(std::move(o));
  }
  return a;
}

// ------------------------------------------------------------------ datasets

namespace {

json config_to_json(const DatasetConfig& c) {
  return {{"frame_size", c.frame_size},
          {"sprite_size", c.sprite_size},
          {"dt", c.dt},
          {"frames", c.frames},
          {"trajectories", c.trajectories},
          {"noise_variance", c.noise_variance},
          {"motion_fraction", c.motion_fraction},
          {"input_kind", to_string(c.input_kind)},
          {"input", {{"a1", c.input.a1}, {"w1", c.input.w1}, {"a2", c.input.a2}, {"w2", c.input.w2}, {"phase", c.input.phase}}},
          {"write_raw", c.write_raw}};
}

DatasetConfig config_from_json(const json& j) {
  DatasetConfig c;
  c.frame_size = j.at("frame_size").get<int>();
  c.sprite_size = j.at("sprite_size").get<int>();
  c.dt = j.at("dt").get<double>();
  c.frames = j.at("frames").get<int>();
  c.trajectories = j.at("trajectories").get<int>();
  c.noise_variance = j.at("noise_variance").get<double>();
  c.motion_fraction = j.at("motion_fraction").get<double>();
  c.input_kind = parse_input_kind(j.at("input_kind").get<std::string>());
  const auto& in = j.at("input");
  c.input = {in.at("a1").get<double>(), in.at("w1").get<double>(), in.at("a2").get<double>(),
             in.at("w2").get<double>(), in.at("phase").get<double>()};
  c.write_raw = j.at("write_raw").get<bool>();
  return c;
}

std::string padded(int v, int width) {
  std::string s = std::to_string(v);
  return std::string(s.size() < static_cast<std::size_t>(width) ? width - s.size() : 0, '0') + s;
}

void validate_config(const DatasetConfig& c, int n_traj) {
  if (n_traj < 1) throw Error(ErrorKind::Validation, "need at least one trajectory");
  if (c.frames < 3) throw Error(ErrorKind::Validation, "need at least 3 frames");
  if (!(c.dt > 0.0)) throw Error(ErrorKind::Validation, "dt must be positive");
  if (c.sprite_size < 2 || c.frame_size < c.sprite_size + 2)
    throw Error(ErrorKind::Validation, "frame must be at least two pixels larger than the sprite");
  if (c.noise_variance < 0.0) throw Error(ErrorKind::Validation, "noise variance must be non-negative");
  if (!(c.motion_fraction > 0.0 && c.motion_fraction < 1.0))
    throw Error(ErrorKind::Validation, "motion fraction must lie in (0, 1)");
}

}  // namespace

DatasetManifest generate_dataset(const SystemSpec& spec, int n_traj, const DatasetConfig& config_in,
                                 std::uint64_t seed, const fs::path& out_dir) {
  spec.validate();
  DatasetConfig config = config_in;
  config.trajectories = n_traj;
  validate_config(config, n_traj);
  const int m = config.frames;
  const int h = config.frame_size;
  const int p = spec.position_count();
  const int d = spec.state_dim();

  InputSignal input = make_input(config.input_kind, config.input, m, config.dt, mix_seed(seed, 1),
                                 spec.forced_count());
  input.values *= spec.forcing_scale;

  std::vector<Trajectory> trajs;
  for (int i = 0; i < n_traj; ++i) {
    std::mt19937_64 rng(mix_seed(seed, 2, static_cast<std::uint64_t>(i)));
    std::uniform_real_distribution<double> uq(-1.5, 1.5), uv(-2.0, 2.0);
    Vector ic(d);
    for (int k = 0; k < p; ++k) ic[k] = uq(rng);
    for (int k = 0; k < p; ++k) ic[p + k] = uv(rng);
    trajs.push_back(simulate(spec, ic, input, config.dt, m));
  }

  // One scale for all objects so that the widest excursion spans the requested fraction.
  double peak = 0.0;
  for (const auto& tr : trajs) peak = std::max(peak, tr.states.leftCols(p).cwiseAbs().maxCoeff());
  if (!(peak > 0.0)) peak = 1.0;
  const double scale = peak / (0.5 * config.motion_fraction * h);

  DatasetManifest man;
  man.root = out_dir;
  man.system = spec;
  man.config = config;
  man.seed = seed;
  for (int k = 0; k < spec.objects; ++k) {
    double ty = 0.5 * h;
    if (spec.objects == 2) ty = (k == 0 ? 0.28 : 0.72) * h;
    man.transforms.push_back(FrameTransform::from_scale(scale, 0.5 * h, ty));
  }

  const SceneAssets assets = make_assets(h, config.sprite_size, spec.objects, seed);
  man.background_path = "assets/background.f32";
  io::write_f32(out_dir / man.background_path, assets.background.px);
  io::write_png(out_dir / "assets/background.png", assets.background);
  for (int k = 0; k < spec.objects; ++k) {
    man.sprite_paths.push_back("assets/sprite_" + std::to_string(k + 1) + ".f32");
    man.alpha_paths.push_back("assets/alpha_logits_" + std::to_string(k + 1) + ".f32");
    io::write_f32(out_dir / man.sprite_paths.back(), assets.objects[k].intensity);
    io::write_f32(out_dir / man.alpha_paths.back(), assets.objects[k].alpha_logits);
  }

  const auto names = spec.state_names();
  const std::uint64_t noise_root = mix_seed(seed, 3);
  for (int i = 0; i < n_traj; ++i) {
    const Trajectory& tr = trajs[i];
    TrajectoryRecord rec;
    rec.frames_dir = "frames/traj" + padded(i, 3);
    rec.truth_csv = "truth/traj" + padded(i, 3) + ".csv";
    rec.initial_condition.assign(tr.initial.data(), tr.initial.data() + tr.initial.size());

    // Physical and spatial object positions per frame; static axes sit at 0.
    std::vector<std::vector<Point2>> phys(m, std::vector<Point2>(spec.objects));
    for (int j = 0; j < m; ++j)
      for (int q = 0; q < p; ++q) phys[j][spec.positions[q].object][spec.positions[q].axis] = tr.states(j, q);

    std::vector<Image> frames(m);
    std::string failure;
#pragma omp parallel for schedule(static)
    for (int j = 0; j < m; ++j) {
      try {
        Image f = render(phys[j], assets, man.transforms);
        frames[j] = add_noise(f, config.noise_variance, mix_seed(noise_root, i, j));
      } catch (const Error& e) {
#pragma omp critical
        if (failure.empty()) failure = "trajectory " + std::to_string(i) + " frame " + std::to_string(j) + ": " + e.what();
      }
    }
    if (!failure.empty())
      throw Error(ErrorKind::OutOfFrame, failure + " (regenerate with a smaller motion fraction or larger frame)");

    for (int j = 0; j < m; ++j) {
      io::write_png(out_dir / rec.frames_dir / ("frame_" + padded(j, 5) + ".png"), frames[j]);
      if (config.write_raw) io::write_f32(out_dir / rec.frames_dir / ("frame_" + padded(j, 5) + ".f32"), frames[j].px);
    }

    io::CsvTable table;
    table.header.push_back("t");
    for (const auto& n : names) table.header.push_back(n);
    for (int g = 0; g < input.values.cols(); ++g) table.header.push_back("g" + std::to_string(g + 1));
    for (int axis = 0; axis < 2; ++axis)
      for (int k = 0; k < spec.objects; ++k)
        table.header.push_back((axis == 0 ? "xs_" : "ys_") + std::to_string(k + 1));
    for (int j = 0; j < m; ++j) {
      std::vector<double> row;
      row.push_back(j * config.dt);
      for (int c = 0; c < d; ++c) row.push_back(tr.states(j, c));
      for (int g = 0; g < input.values.cols(); ++g) row.push_back(input.values(j, g));
      for (int axis = 0; axis < 2; ++axis)
        for (int k = 0; k < spec.objects; ++k) row.push_back(to_spatial(phys[j][k][axis], man.transforms[k], axis));
      table.rows.push_back(std::move(row));
    }
    io::write_csv(out_dir / rec.truth_csv, table);
    man.trajectories.push_back(std::move(rec));
  }

  io::write_json(out_dir / "manifest.json", man.to_json());
  return man;
}

json DatasetManifest::to_json() const {
  json j;
  j["schema"] = kSchema;
  j["system"] = system.to_json();
  j["config"] = config_to_json(config);
  j["seed"] = seed;
  j["assets"] = {{"background", background_path}, {"sprites", sprite_paths}, {"alpha_logits", alpha_paths}};
  j["transforms"] = json::array();
  for (const auto& t : transforms)
    j["transforms"].push_back({{"tx", t.tx}, {"ty", t.ty}, {"rho", t.rho}, {"scale", t.scale()}});
  j["trajectories"] = json::array();
  for (const auto& r : trajectories)
    j["trajectories"].push_back(
        {{"frames_dir", r.frames_dir}, {"truth_csv", r.truth_csv}, {"initial_condition", r.initial_condition}});
  return j;
}

DatasetManifest DatasetManifest::load(const fs::path& dir) {
  const fs::path file = dir / "manifest.json";
  if (!fs::exists(file)) throw Error(ErrorKind::Io, "no manifest.json in " + dir.string());
  const json j = io::read_json(file);
  DatasetManifest m;
  m.root = dir;
  try {
    if (j.at("schema").get<std::string>() != kSchema)
      throw Error(ErrorKind::Validation, "unsupported manifest schema " + j.at("schema").dump());
    m.system = SystemSpec::from_json(j.at("system"));
    m.config = config_from_json(j.at("config"));
    m.seed = j.at("seed").get<std::uint64_t>();
    m.background_path = j.at("assets").at("background").get<std::string>();
    m.sprite_paths = j.at("assets").at("sprites").get<std::vector<std::string>>();
    m.alpha_paths = j.at("assets").at("alpha_logits").get<std::vector<std::string>>();
    for (const auto& t : j.at("transforms"))
      m.transforms.push_back({t.at("tx").get<double>(), t.at("ty").get<double>(), t.at("rho").get<double>()});
    for (const auto& r : j.at("trajectories"))
      m.trajectories.push_back({r.at("frames_dir").get<std::string>(), r.at("truth_csv").get<std::string>(),
                                r.at("initial_condition").get<std::vector<double>>()});
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Validation, std::string("bad manifest: ") + e.what());
  }
  if (static_cast<int>(m.sprite_paths.size()) != m.system.objects ||
      static_cast<int>(m.transforms.size()) != m.system.objects)
    throw Error(ErrorKind::Validation, "manifest asset/transform count does not match the object count");
  if (m.trajectories.empty()) throw Error(ErrorKind::Validation, "manifest lists no trajectories");

  std::vector<std::string> files = {m.background_path};
  files.insert(files.end(), m.sprite_paths.begin(), m.sprite_paths.end());
  files.insert(files.end(), m.alpha_paths.begin(), m.alpha_paths.end());
  for (const auto& f : files)
    if (!fs::exists(dir / f)) throw Error(ErrorKind::Io, "missing asset " + (dir / f).string());
  for (int t = 0; t < static_cast<int>(m.trajectories.size()); ++t) {
    if (!fs::exists(dir / m.trajectories[t].truth_csv))
      throw Error(ErrorKind::Io, "missing ground truth " + (dir / m.trajectories[t].truth_csv).string());
    for (int f : {0, m.config.frames - 1})
      if (!fs::exists(m.frame_path(t, f)))
        throw Error(ErrorKind::Io, "missing frame " + m.frame_path(t, f).string());
    if (fs::exists(m.frame_path(t, m.config.frames)))
      throw Error(ErrorKind::Validation, "trajectory " + std::to_string(t) + " has more frames than the manifest states");
  }
  return m;
}

fs::path DatasetManifest::frame_path(int traj, int frame, bool raw) const {
  return root / trajectories.at(traj).frames_dir / ("frame_" + padded(frame, 5) + (raw ? ".f32" : ".png"));
}

std::vector<Image> DatasetManifest::load_frames(int traj, bool raw) const {
  std::vector<Image> frames;
  frames.reserve(config.frames);
  const int h = config.frame_size;
  for (int j = 0; j < config.frames; ++j) {
    if (raw) {
      Image img(h, h);
      img.px = io::read_f32(frame_path(traj, j, true));
      if (img.px.size() != static_cast<std::size_t>(h) * h)
        throw Error(ErrorKind::ShapeMismatch, "raw frame size mismatch in " + frame_path(traj, j, true).string());
      frames.push_back(std::move(img));
    } else {
      Image img = io::read_png(frame_path(traj, j));
      if (img.rows != h || img.cols != h)
        throw Error(ErrorKind::ShapeMismatch, "frame size mismatch in " + frame_path(traj, j).string());
      frames.push_back(std::move(img));
    }
  }
  return frames;
}

SceneAssets DatasetManifest::load_assets() const {
  SceneAssets a;
  const int h = config.frame_size;
  const int w = config.sprite_size;
  a.frame_size = h;
  a.background = Image(h, h);
  a.background.px = io::read_f32(root / background_path);
  if (a.background.px.size() != static_cast<std::size_t>(h) * h)
    throw Error(ErrorKind::ShapeMismatch, "background asset has the wrong size");
  for (std::size_t k = 0; k < sprite_paths.size(); ++k) {
    ObjectAssets o = ObjectAssets::blank(w);
    o.intensity = io::read_f32(root / sprite_paths[k]);
    o.alpha_logits = io::read_f32(root / alpha_paths[k]);
    if (o.intensity.size() != static_cast<std::size_t>(w) * w || o.alpha_logits.size() != o.intensity.size())
      throw Error(ErrorKind::ShapeMismatch, "sprite asset has the wrong size");
    a.objects.push_back(std::move(o));
  }
  return a;
}

io::CsvTable DatasetManifest::load_truth(int traj) const {
  return io::read_csv(root / trajectories.at(traj).truth_csv);
}

}  // namespace phyvid
