// imgast: train | validate | ast | verify | report
#include "imgast/commands.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

namespace {

enum Exit { kOk = 0, kConfig = 2, kMissing = 3, kRuntime = 4 };

void print_rows(const std::vector<imgast::TableRow>& rows) {
  std::cout << imgast::table_header() << '\n';
  for (const auto& r : rows) std::cout << imgast::format_row(r) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  using namespace imgast;
  CLI::App app{"Adaptive stress testing of an image-based taxiing controller"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::uint64_t seed = 0;
  std::string out_dir;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "INI run configuration")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "run seed (also the training seed for `train`)");
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--set", overrides, "override one key, section.key=value (repeatable)");

  auto* train = app.add_subcommand("train", "train the controller on the synthetic dataset");
  auto* validate = app.add_subcommand("validate", "nominal closed-loop validation from random starts");
  auto* ast = app.add_subcommand("ast", "search for a failure with mcts, dqn or random");
  std::string method;
  ast->add_option("--method", method, "mcts | dqn | random")->required();
  auto* verify = app.add_subcommand("verify", "largest output change within an L-infinity box");
  std::string image;
  double delta = 0.0;
  verify->add_option("--image", image, "16x8 plain PGM or JSON array of 128 values")->required();
  verify->add_option("--delta", delta, "per-pixel disturbance bound")->required();
  auto* report = app.add_subcommand("report", "tables, polylines, image strips and phase sweep");
  std::string trace_dir;
  report->add_option("--traces", trace_dir, "directory with trace files (default: --out)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
    for (const auto& o : overrides) apply_override(cfg, o);
    if (*seed_opt) {
      cfg.seed = seed;
      if (train->parsed()) cfg.train.seed = seed;
    }
    if (!out_dir.empty()) cfg.out = out_dir;
    cfg.validate_all();

    if (train->parsed()) {
      const TrainOutput t = cmd_train(cfg);
      std::printf("weights %s\nvalidation rmse: d %.4f m, theta %.4f deg\n", t.weights.c_str(),
                  t.report.validation_rmse.at(0), t.report.validation_rmse.at(1));
    } else if (validate->parsed()) {
      const ValidationReport r = cmd_validate(cfg);
      std::printf("episodes %d failures %d mean|d| %.4f std|d| %.4f max|d| %.4f max|theta| %.4f -> %s\n", r.episodes,
                  r.failures, r.mean_abs_d, r.std_abs_d, r.max_abs_d, r.max_abs_theta, r.passed ? "pass" : "fail");
    } else if (ast->parsed()) {
      const AstRunOutput r = cmd_ast(cfg, parse_method(method));
      print_rows(r.rows);
      std::printf("%.1f s, output in %s\n", r.seconds, cfg.out.c_str());
    } else if (verify->parsed()) {
      const VerifyOutput v = cmd_verify(cfg, image, delta);
      std::printf("rudder %.6f\nincrease: eps in [%.6f, %.6f]\ndecrease: eps in [%.6f, %.6f]\n", v.f0,
                  v.increase.eps_lower, v.increase.eps_upper, v.decrease.eps_lower, v.decrease.eps_upper);
    } else if (report->parsed()) {
      const ReportOutput r = cmd_report(cfg, trace_dir.empty() ? cfg.out : std::filesystem::path(trace_dir));
      print_rows(r.rows);
      std::printf("%s\n", r.finding.c_str());
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const MissingArtifact& e) {
    std::cerr << "missing: " << e.what() << '\n';
    return kMissing;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kOk;
}
