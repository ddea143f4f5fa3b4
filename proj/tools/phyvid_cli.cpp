#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "phyvid/dynsim.hpp"
#include "phyvid/error.hpp"
#include "phyvid/evalrep.hpp"
#include "phyvid/io.hpp"
#include "phyvid/trainer.hpp"

namespace fs = std::filesystem;
using namespace phyvid;

namespace {

std::string command_line(int argc, char** argv) {
  std::string s;
  for (int i = 0; i < argc; ++i) {
    if (i) s += ' ';
    s += argv[i];
  }
  return s;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct GenerateArgs {
  std::string system;
  std::string out;
  std::uint64_t seed = 0;
  DatasetConfig config;
};

struct DiscoverArgs {
  std::string data;
  std::string config;
  std::string out;
  std::int64_t seed = -1;
};

int cmd_generate(const GenerateArgs& a) {
  const SystemSpec spec = SystemSpec::defaults(parse_system_kind(a.system));
  const auto man = generate_dataset(spec, a.config.trajectories, a.config, a.seed, a.out);
  std::printf("wrote %d trajectories of %d frames to %s\n", static_cast<int>(man.trajectories.size()),
              man.config.frames, a.out.c_str());
  return 0;
}

int cmd_discover(const DiscoverArgs& a, const std::string& cmdline) {
  TrainConfig cfg;
  std::string config_text;
  if (!a.config.empty()) {
    config_text = read_text(a.config);
    cfg = TrainConfig::from_toml(config_text, a.config);
  }
  if (a.seed >= 0) cfg.seed = static_cast<std::uint64_t>(a.seed);
  const DatasetManifest man = DatasetManifest::load(fs::absolute(a.data).lexically_normal());
  DiscoveryResult res = discover(man, cfg);
  res.provenance = {{"command_line", cmdline},
                    {"config_path", a.config},
                    {"config_text", config_text},
                    {"seed", cfg.seed}};
  res.save(a.out);
  std::printf("%s", format_equations(res.state.library, res.state.coeffs, res.state_names, res.input_mask).c_str());
  return 0;
}

int cmd_eval(const std::string& run) {
  auto [res, man] = load_run(run);
  const EvalReport rep = equation_metrics(res, man);
  io::write_json(fs::path(run) / "eval.json", rep.to_json());
  std::printf("%s", rep.equations_aligned.c_str());
  std::printf("support: precision %.3f recall %.3f (%s)\n", rep.precision, rep.recall,
              rep.support_exact ? "exact" : "inexact");
  for (const auto& c : rep.coefficients)
    std::printf("  d%s/dt %-10s truth %+.4g learned %+.4g rel.err %.2f%%\n", c.equation.c_str(), c.term.c_str(),
                c.truth, c.learned, 100.0 * c.rel_error);
  for (const auto& in : rep.inputs)
    std::printf("input %s correlation %.4f\n", in.equation.c_str(), in.correlation);
  std::printf("min trajectory R^2 %.5f\n", rep.min_r2);
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, const std::string& corrupt) {
  const GradcheckReport rep = gradient_check(seed, corrupt);
  for (const auto& g : rep.groups)
    std::printf("%-10s checked %3d  max rel.err %.3e  %s\n", g.name.c_str(), g.checked, g.max_rel_error,
                g.pass ? "ok" : "FAIL");
  std::printf("%s\n", rep.pass() ? "gradcheck passed" : "gradcheck FAILED");
  return rep.pass() ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Governing-equation discovery from synthetic videos of moving objects"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "simulate a system and render its videos");
  g->add_option("--system", gen.system, "smsd, smtd, tmtd or duffing")
      ->required()
      ->check(CLI::IsMember({"smsd", "smtd", "tmtd", "duffing"}, CLI::ignore_case));
  g->add_option("--out", gen.out, "dataset directory")->required();
  g->add_option("--seed", gen.seed, "random seed")->required();
  g->add_option("--frames", gen.config.frames, "frames per trajectory")->check(CLI::Range(4, 1000000));
  g->add_option("--dt", gen.config.dt, "time step in seconds")->check(CLI::PositiveNumber);
  g->add_option("--noise-var", gen.config.noise_variance, "pixel noise variance")->check(CLI::NonNegativeNumber);
  g->add_option("--traj", gen.config.trajectories, "number of trajectories")->check(CLI::Range(1, 1000));

  DiscoverArgs disc;
  auto* d = app.add_subcommand("discover", "learn coordinates, equations and input from a dataset");
  d->add_option("--data", disc.data, "dataset directory")->required();
  d->add_option("--config", disc.config, "TOML configuration (defaults when omitted)");
  d->add_option("--out", disc.out, "run directory")->required();
  d->add_option("--seed", disc.seed, "override [trainer] seed");

  std::string run;
  auto* e = app.add_subcommand("eval", "score a run against the dataset's ground truth");
  e->add_option("--run", run, "run directory")->required();
  auto* r = app.add_subcommand("report", "write equations, aligned CSVs and SVG plots under <run>/report");
  r->add_option("--run", run, "run directory")->required();

  std::uint64_t gc_seed = 1;
  std::string corrupt;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every gradient group");
  gc->add_option("--seed", gc_seed, "scene seed");
  gc->add_option("--corrupt", corrupt, "perturb one group's analytic gradient (self-test)")->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    std::cerr << "error: " << ex.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (*g) return cmd_generate(gen);
    if (*d) return cmd_discover(disc, command_line(argc, argv));
    if (*e) return cmd_eval(run);
    if (*r) {
      emit_report(run);
      std::printf("report written to %s\n", (fs::path(run) / "report").string().c_str());
      return 0;
    }
    if (*gc) return cmd_gradcheck(gc_seed, corrupt);
  } catch (const Error& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return ex.is_validation() ? 1 : 2;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 2;
  }
  return 1;
}
