#pragma once

#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>

#include "phyvid/dynsim.hpp"
#include "phyvid/trainer.hpp"

namespace testutil {

namespace fs = std::filesystem;

// Fresh, empty directory under the system temp dir.
inline fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("phyvid_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

inline std::string bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Relative path -> contents for every regular file below `root`.
inline std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = bytes(e.path());
  return out;
}

inline phyvid::DatasetConfig small_config(int frames = 60, int trajectories = 2) {
  phyvid::DatasetConfig c;
  c.frames = frames;
  c.trajectories = trajectories;
  return c;
}

// A discovery result holding the generating truth: true coordinates,
// transforms, assets, coefficients and input.
inline phyvid::DiscoveryResult truth_result(const phyvid::DatasetManifest& man, int degree = 3) {
  using namespace phyvid;
  DiscoveryResult r;
  r.data_dir = man.root.string();
  r.trajectories = static_cast<int>(man.trajectories.size());
  r.m = man.config.frames;
  r.frame_size = man.config.frame_size;
  r.dt = man.config.dt;
  r.objects = man.system.objects;
  VideoData v;
  v.objects = r.objects;
  v.set_positions(man.system.positions);
  r.positions = v.positions;
  r.input_mask = v.input_mask;
  r.state_names = v.state_names;
  r.config.library_degree = degree;

  ModelState& s = r.state;
  s.assets = man.load_assets();
  s.transforms = man.transforms;
  for (int t = 0; t < r.trajectories; ++t) {
    const auto tab = man.load_truth(t);
    std::vector<std::vector<double>> xs, ys;
    for (int k = 0; k < r.objects; ++k) {
      xs.push_back(tab.values("xs_" + std::to_string(k + 1)));
      ys.push_back(tab.values("ys_" + std::to_string(k + 1)));
    }
    for (int j = 0; j < r.m; ++j)
      for (int k = 0; k < r.objects; ++k) s.coords.push_back({xs[k][j], ys[k][j]});
  }
  const int d = man.system.state_dim();
  s.library = LibrarySpec::polynomial(d, degree);
  s.coeffs = man.system.true_coefficients(s.library);
  s.input = Matrix::Zero(r.m - 2, d);
  const auto tab = man.load_truth(0);
  int col = 0;
  for (int k = 0; k < d; ++k) {
    if (!man.system.input_mask[k]) continue;
    const auto g = tab.values("g" + std::to_string(++col));
    for (int j = 0; j < r.m - 2; ++j) s.input(j, k) = g[j + 1];
  }
  return r;
}

// Sparse regression straight on the ground-truth positions of a dataset,
// bypassing the video entirely.
struct OracleFit {
  phyvid::LibrarySpec library;
  phyvid::SparseFit fit;
  phyvid::CoefficientMatrix truth;
  phyvid::Matrix true_input;  // interior rows, state columns
};

inline OracleFit oracle_fit(const phyvid::DatasetManifest& man, int degree = 3, double tau = 0.1) {
  using namespace phyvid;
  const SystemSpec& sys = man.system;
  const int p = sys.position_count(), d = sys.state_dim(), m = man.config.frames;
  const int n = static_cast<int>(man.trajectories.size());
  OracleFit o;
  o.library = LibrarySpec::polynomial(d, degree);
  Matrix theta(n * (m - 2), o.library.size()), rates(n * (m - 2), d);
  std::vector<int> time_index;
  for (int t = 0; t < n; ++t) {
    const auto tab = man.load_truth(t);
    Matrix q(m, p);
    for (int i = 0; i < p; ++i) {
      const auto col = tab.values(sys.positions[i].name);
      for (int j = 0; j < m; ++j) q(j, i) = col[j];
    }
    const auto ss = state_space_from_positions(q, man.config.dt);
    theta.middleRows(t * (m - 2), m - 2) = build_library(ss.states, o.library);
    rates.middleRows(t * (m - 2), m - 2) = ss.rates;
    for (int j = 0; j < m - 2; ++j) time_index.push_back(j);
  }
  o.fit = sparse_identify(theta, rates, time_index, m - 2, sys.input_mask, tau, 10);
  o.truth = sys.true_coefficients(o.library);
  o.true_input = Matrix::Zero(m - 2, d);
  const auto tab = man.load_truth(0);
  int col = 0;
  for (int k = 0; k < d; ++k) {
    if (!sys.input_mask[k]) continue;
    const auto g = tab.values("g" + std::to_string(++col));
    for (int j = 0; j < m - 2; ++j) o.true_input(j, k) = g[j + 1];
  }
  return o;
}

// Largest relative coefficient error over the true support, or infinity when
// the recovered support differs.
inline double support_error(const phyvid::CoefficientMatrix& got, const phyvid::CoefficientMatrix& truth) {
  double worst = 0.0;
  for (Eigen::Index r = 0; r < truth.xi.rows(); ++r)
    for (Eigen::Index c = 0; c < truth.xi.cols(); ++c) {
      const bool want = truth.xi(r, c) != 0.0;
      if (want != static_cast<bool>(got.active(r, c))) return std::numeric_limits<double>::infinity();
      if (want) worst = std::max(worst, std::abs(got.xi(r, c) - truth.xi(r, c)) / std::abs(truth.xi(r, c)));
    }
  return worst;
}

}  // namespace testutil
