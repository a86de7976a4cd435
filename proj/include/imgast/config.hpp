// Run configuration: one INI document covering every module, with unknown
// keys rejected and the fully defaulted result echoed next to the outputs.
#pragma once

#include "imgast/dataset.hpp"
#include "imgast/dqn.hpp"
#include "imgast/mcts.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace imgast {

/// Exit code 2.
class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Exit code 3.
class MissingArtifact : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct ValidateConfig {
  int episodes = 100;
  int steps = 20;
  double d_min = -5.0, d_max = 5.0;
  double theta_min = -20.0, theta_max = 20.0;
};

struct AstRunConfig {
  double start_d = 0.0;
  double start_theta = 0.0;
  double start_downtrack = 0.0;
  /// Realizes tree expansions and evaluation episodes: verifier | heuristic.
  std::string realizer = "verifier";
  int random_samples = 5000;
};

struct DqnRunConfig {
  int episodes = 1000;
  int max_steps = 1000;
  double reward_scale = 1e-4;
  /// Inner realizer behind the training memo: verifier | heuristic.
  std::string train_realizer = "heuristic";
  MemoGrid memo{2.0, 6.0, 5.0, 15.0, 0.0};
  StartBox starts;
  /// Held-out evaluation starts, flattened (d, theta) pairs.
  std::vector<double> eval_starts{-4.2, 7.0, 3.1, -12.0, 0.7, 15.0, -1.9, -4.0, 4.6, 3.0};
};

struct ReportConfig {
  int sweep_shifts = 15;  // evenly spaced initial downtrack shifts over one dash period
  std::string sweep_realizer = "heuristic";
  int strip_steps = 3;  // image strips for the first steps of each failing trace
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::filesystem::path out = "out";
  /// Raw (two-output) weights; the rudder head is composed from `gains`.
  std::filesystem::path weights = "data/controller.json";

  SceneConfig scene;
  SimConfig sim;
  ControlGains gains;
  DatasetGrid dataset;
  TrainConfig train;
  ValidateConfig validate;
  AstConfig ast;
  AstRunConfig ast_run;
  MctsConfig mcts;
  RolloutCacheConfig cache;
  QNetConfig dqn;
  DqnRunConfig dqn_run;
  EpsSearchConfig epsearch;
  ReportConfig report;

  RunConfig();
  /// Throws ConfigError naming the offending section/key.
  void validate_all() const;
};

/// Defaults overridden by the file's keys. Unknown sections or keys, and
/// unparsable values, throw ConfigError naming "section.key".
RunConfig load_config(const std::filesystem::path& path);
/// Applies "section.key=value" on top of `cfg` (same errors as load_config).
void apply_override(RunConfig& cfg, const std::string& assignment);

/// Every key with its effective value, INI formatted; reloading it gives
/// the same configuration.
std::string dump_config(const RunConfig& cfg);
void write_config(const RunConfig& cfg, const std::filesystem::path& path);

}  // namespace imgast
