#include "imgast/commands.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace imgast;
namespace fs = std::filesystem;

namespace {

const fs::path kData = IMGAST_DATA_DIR;

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / "imgast_test_cli" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunConfig base_config(const std::string& name) {
  RunConfig c;
  c.weights = kData / "controller.json";
  c.out = fresh_dir(name);
  return c;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("config: unknown keys and bad values name the key") {
  const fs::path d = fresh_dir("cfg");
  std::ofstream(d / "bad.ini") << "[ast]\ndelta_max = 0.05\nbogus = 1\n";
  CHECK_THROWS_WITH_AS(load_config(d / "bad.ini"), doctest::Contains("ast.bogus"), ConfigError);
  std::ofstream(d / "badsec.ini") << "[nonsense]\nx = 1\n";
  CHECK_THROWS_WITH_AS(load_config(d / "badsec.ini"), doctest::Contains("nonsense.x"), ConfigError);
  std::ofstream(d / "badval.ini") << "[mcts]\niterations = lots\n";
  CHECK_THROWS_WITH_AS(load_config(d / "badval.ini"), doctest::Contains("mcts.iterations"), ConfigError);
  CHECK_THROWS_AS(load_config(d / "missing.ini"), MissingArtifact);

  std::ofstream(d / "ok.ini") << "[ast]\ndelta_max = 0.05\n[mcts]\nrollout = fixed-delta\n[epsearch]\nupper_bound = 0.25\n";
  const RunConfig c = load_config(d / "ok.ini");
  CHECK(c.ast.delta_max == 0.05);
  CHECK(c.mcts.rollout == RolloutPolicy::FixedDelta);
  CHECK(c.epsearch.upper_bound.value() == 0.25);
  CHECK(c.mcts.iterations == MctsConfig{}.iterations);
}

TEST_CASE("config: the echoed file reloads to the same configuration") {
  RunConfig c;
  apply_override(c, "ast.delta_max=0.0123456789");
  apply_override(c, "dqn.hidden=16, 8");
  apply_override(c, "verify.mean_preserving=true");
  CHECK(c.dqn.hidden == std::vector<int>{16, 8});
  const fs::path d = fresh_dir("echo");
  write_config(c, d / "config.ini");
  const RunConfig back = load_config(d / "config.ini");
  CHECK(dump_config(back) == dump_config(c));
  CHECK(back.ast.delta_max == 0.0123456789);
  CHECK_THROWS_AS(apply_override(c, "no_dot=1"), ConfigError);
}

TEST_CASE("config: semantic validation") {
  RunConfig c;
  c.ast_run.realizer = "oracle";
  CHECK_THROWS_AS(c.validate_all(), ConfigError);
  c = {};
  c.ast.n_actions = 1;
  CHECK_THROWS_WITH_AS(c.validate_all(), doctest::Contains("[ast]"), ConfigError);
}

TEST_CASE("validate: 100 episodes, gate passes, traces replay bitwise") {
  const RunConfig c = base_config("validate");
  const ValidationReport r = cmd_validate(c);
  CHECK(r.episodes == 100);
  CHECK(r.failures == 0);
  CHECK(r.mean_abs_d < 1.0);
  CHECK(r.max_abs_theta < 5.0);
  CHECK(r.passed);
  const auto eps = read_trace_file(c.out / "validation.jsonl");
  CHECK(eps.size() == 100);
  Simulator sim(load_rudder_net(c), c.scene, c.sim);
  for (const auto& e : eps) {
    REQUIRE(recomputation_matches(e));
    REQUIRE(replay_deviation(sim, e) == 0.0);
  }
  RunConfig missing = c;
  missing.weights = c.out / "nope.json";
  CHECK_THROWS_AS(cmd_validate(missing), MissingArtifact);
}

TEST_CASE("ast random: byte-identical reruns, report recomputes the row") {
  RunConfig a = base_config("random_a");
  a.ast.delta_max = 0.05;
  a.ast.horizon = 12;
  a.ast_run.random_samples = 300;
  RunConfig b = a;
  b.out = fresh_dir("random_b");
  const AstRunOutput ra = cmd_ast(a, AstMethod::Random);
  cmd_ast(b, AstMethod::Random);
  CHECK(slurp(a.out / "traces.jsonl") == slurp(b.out / "traces.jsonl"));
  REQUIRE(ra.rows.size() == 1);
  CHECK(ra.rows[0].steps == 12);
  CHECK(ra.rows[0].delta_mean == 0.05);

  RunConfig rep = a;
  rep.report.sweep_shifts = 3;
  const ReportOutput r = cmd_report(rep, a.out);
  CHECK(r.matches_runtime);
  CHECK(r.recomputed);
  CHECK(r.worst_replay == 0.0);
  REQUIRE(r.rows.size() == 1);
  CHECK(format_row(r.rows[0]) == format_row(ra.rows[0]));
  CHECK(r.sweep.size() == 3);
  CHECK(fs::exists(a.out / "report" / "polylines.tsv"));
  CHECK(fs::exists(a.out / "report" / "strip_traces_ep0_step0.pgm"));
}

TEST_CASE("ast mcts with budget 1 gives a valid row") {
  RunConfig c = base_config("mcts1");
  c.mcts.iterations = 1;
  c.mcts.use_cache = false;
  c.ast_run.realizer = "heuristic";
  c.ast.horizon = 50;
  const AstRunOutput r = cmd_ast(c, AstMethod::Mcts);
  REQUIRE(r.rows.size() == 1);
  CHECK(r.rows[0].method == "mcts");
  CHECK(r.rows[0].steps > 0);
  CHECK(fs::exists(c.out / "tree_edges.tsv"));
  const auto eps = read_trace_file(c.out / "traces.jsonl");
  REQUIRE(eps.size() == 1);
  CHECK(recomputation_matches(eps[0]));
}

TEST_CASE("report: empty directory and corrupt traces") {
  RunConfig c = base_config("report_empty");
  const fs::path empty = fresh_dir("empty_traces");
  const ReportOutput r = cmd_report(c, empty);
  CHECK(r.rows.empty());
  CHECK(slurp(c.out / "report" / "table.tsv") == "source\t" + table_header() + "\n");

  const fs::path bad = fresh_dir("bad_traces");
  std::ofstream(bad / "traces.jsonl") << "{\"type\":\"episode\"}\n";
  CHECK_THROWS_WITH_AS(cmd_report(c, bad), doctest::Contains("traces.jsonl:1"), TraceFormatError);
  std::ofstream(bad / "traces.jsonl", std::ios::trunc) << "\n\nnot json\n";
  CHECK_THROWS_WITH_AS(cmd_report(c, bad), doctest::Contains("traces.jsonl:3"), TraceFormatError);
  CHECK_THROWS_AS(cmd_report(c, c.out / "nowhere"), MissingArtifact);
}

TEST_CASE("verify command on a PGM image") {
  RunConfig c = base_config("verify");
  const Image8x16 x = observe_state({1.0, 2.0, 0.0, 0.0}, c.scene);
  Image8x16 clamped = x;
  for (double& v : clamped.px) v = std::clamp(v, 0.0, 1.0);
  write_pgm(c.out / "x.pgm", clamped);
  const VerifyOutput v = cmd_verify(c, c.out / "x.pgm", 0.01);
  CHECK(v.increase.eps_lower <= v.increase.eps_upper);
  CHECK(v.decrease.eps_lower <= v.decrease.eps_upper);
  CHECK(v.increase.eps_upper - v.increase.eps_lower <= c.epsearch.tol + 1e-12);
  CHECK(fs::exists(c.out / "verify.json"));
  CHECK_THROWS_AS(cmd_verify(c, c.out / "none.pgm", 0.01), MissingArtifact);
  CHECK_THROWS_AS(cmd_verify(c, c.out / "x.pgm", 0.0), ConfigError);
}

}  // TEST_SUITE
