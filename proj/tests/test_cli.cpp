#include <cstdio>
#include <string>
#include <sys/wait.h>

#include <doctest.h>

#include "phyvid/io.hpp"
#include "test_util.hpp"

namespace {

struct Run {
  int code = -1;
  std::string output;  // stdout and stderr interleaved
};

Run cli(const std::string& args) {
  const std::string cmd = std::string("\"") + PHYVID_CLI_PATH + "\" " + args + " 2>&1";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) r.output.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

bool contains(const std::string& s, const std::string& part) { return s.find(part) != std::string::npos; }

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("usage errors exit with 1") {
  Run r = cli("generate --bogus");
  CHECK(r.code == 1);
  CHECK(contains(r.output, "Usage"));
  r = cli("");
  CHECK(r.code == 1);
  r = cli("generate --system pendulum --out /tmp/x --seed 1");
  CHECK(r.code == 1);
  r = cli("generate --system smsd --out /tmp/x --seed 1 --frames 2");
  CHECK(r.code == 1);
}

TEST_CASE("a missing dataset names its path") {
  const auto dir = testutil::scratch("cli_missing");
  const Run r = cli("discover --data " + (dir / "nowhere").string() + " --out " + (dir / "run").string());
  CHECK(r.code == 1);
  CHECK(contains(r.output, "nowhere"));
  const Run e = cli("eval --run " + (dir / "norun").string());
  CHECK(e.code == 1);
}

TEST_CASE("gradcheck passes and its self-test fails") {
  Run r = cli("gradcheck --seed 2");
  CHECK(r.code == 0);
  CHECK(contains(r.output, "gradcheck passed"));
  r = cli("gradcheck --seed 2 --corrupt alpha");
  CHECK(r.code == 2);
  CHECK(contains(r.output, "FAIL"));
}

TEST_CASE("generate is deterministic") {
  const auto a = testutil::scratch("cli_gen_a"), b = testutil::scratch("cli_gen_b");
  const std::string common = " --system tmtd --seed 5 --frames 20 --traj 2";
  REQUIRE(cli("generate --out " + a.string() + common).code == 0);
  REQUIRE(cli("generate --out " + b.string() + common).code == 0);
  CHECK(testutil::tree(a) == testutil::tree(b));
  CHECK(std::filesystem::exists(a / "manifest.json"));
}

TEST_CASE("generate, discover, eval and report end to end") {
  const auto dir = testutil::scratch("cli_pipeline");
  const auto data = dir / "data", run = dir / "run", cfg = dir / "tiny.toml";
  REQUIRE(cli("generate --system smsd --seed 3 --frames 80 --traj 2 --out " + data.string()).code == 0);
  phyvid::io::write_text(cfg,
                         "[trainer]\npretrain = 40\njoint = 40\nrounds = 1\nbetween_rounds = 10\nrefine = 10\n");
  const Run d = cli("discover --data " + data.string() + " --config " + cfg.string() + " --out " + run.string());
  REQUIRE_MESSAGE(d.code == 0, d.output);
  CHECK(contains(d.output, "dvx/dt"));
  CHECK(std::filesystem::exists(run / "result.json"));

  const Run e = cli("eval --run " + run.string());
  CHECK_MESSAGE(e.code == 0, e.output);
  CHECK(contains(e.output, "precision"));
  CHECK(std::filesystem::exists(run / "eval.json"));

  const Run r = cli("report --run " + run.string());
  CHECK_MESSAGE(r.code == 0, r.output);
  const std::string eq = testutil::bytes(run / "report" / "equations.txt");
  CHECK(contains(eq, "dvx/dt"));
  CHECK(contains(eq, "g1(t)"));
}

}  // TEST_SUITE
