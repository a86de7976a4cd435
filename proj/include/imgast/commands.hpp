// The five command-line operations as library calls. Each writes its
// outputs (and the effective config.ini) under cfg.out and returns the
// numbers it wrote.
#pragma once

#include "imgast/config.hpp"
#include "imgast/trace_io.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace imgast {

/// Rudder network from cfg.weights and cfg.gains; MissingArtifact when absent.
NetworkDefinition load_rudder_net(const RunConfig& cfg);

/// One row of the results table.
struct TableRow {
  std::string method;
  int episode = 0;
  int n_actions = 0;
  double delta_max = 0.0;
  bool failure = false;
  int steps = 0;
  double delta_mean = 0.0;
  double log_likelihood = 0.0;
};

TableRow table_row(const TraceHeader& h, const EpisodeTrace& t);
std::string table_header();
/// Tab-separated, doubles in shortest round-trip form.
std::string format_row(const TableRow& r);
std::string format_double(double v);

struct TrainOutput {
  NetworkDefinition net;  // raw two-output network
  TrainReport report;
  std::filesystem::path weights;
};
/// Writes weights.json and train_metrics.json.
TrainOutput cmd_train(const RunConfig& cfg);

struct ValidationReport {
  int episodes = 0;
  int failures = 0;
  double mean_abs_d = 0.0;
  double std_abs_d = 0.0;
  double max_abs_d = 0.0;
  double max_abs_theta = 0.0;
  bool passed = false;  // no failures, mean |d| < 1 m, every |theta| < 5 deg
};
/// Writes validation.jsonl (zero-disturbance traces) and validation.json.
ValidationReport cmd_validate(const RunConfig& cfg);

enum class AstMethod { Mcts, Dqn, Random };
std::string to_string(AstMethod m);
/// Throws ConfigError on an unknown name.
AstMethod parse_method(const std::string& s);

struct AstRunOutput {
  std::vector<TraceHeader> headers;
  std::vector<EpisodeTrace> traces;
  std::vector<TableRow> rows;
  std::optional<MctsResult> mcts;
  std::optional<DqnResult> dqn;
  double seconds = 0.0;
};
/// Writes traces.jsonl (+ timing sidecar), table.tsv and, per method,
/// tree_edges.tsv / best_history.tsv (mcts) or qnet.json / dqn_returns.tsv (dqn).
AstRunOutput cmd_ast(const RunConfig& cfg, AstMethod method);

struct VerifyOutput {
  DisturbanceResult increase;
  DisturbanceResult decrease;
  double f0 = 0.0;
};
/// Image: plain PGM (16 x 8) scaled by its maxval, or a JSON array of 128
/// values, used as the controller input as is. Writes verify.json.
VerifyOutput cmd_verify(const RunConfig& cfg, const std::filesystem::path& image, double delta);

struct PhaseSweepRow {
  std::string source;  // trace file name
  int episode = 0;
  double shift = 0.0;  // meters added to the initial downtrack
  double phase = 0.0;  // initial dash phase
  bool in_gap = false;
  bool failure = false;
  int steps = 0;
  double max_abs_d = 0.0;
};

struct ReportOutput {
  std::vector<TableRow> rows;
  std::vector<std::string> row_sources;
  /// Per trace directory table.tsv written at run time equals the recomputed rows.
  bool matches_runtime = true;
  std::vector<PhaseSweepRow> sweep;
  int gap_starts = 0, gap_failures = 0;
  int dash_starts = 0, dash_failures = 0;
  std::string finding;
  double worst_replay = 0.0;
  bool recomputed = true;
};
/// Reads every trace file in `traces` (using its config.ini when present)
/// and writes tables, polylines, tree edges, PGM strips and the phase sweep
/// to cfg.out / "report". Corrupt traces raise TraceFormatError.
ReportOutput cmd_report(const RunConfig& cfg, const std::filesystem::path& traces);

}  // namespace imgast
