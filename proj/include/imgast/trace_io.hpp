// Line-delimited JSON traces: an "episode" header, one "step" line per
// control step and a "summary" line. Wall-clock timing lives in a sidecar
// file so reruns with one seed give byte-identical traces.
#pragma once

#include "imgast/ast.hpp"

#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace imgast {

/// Names the file and 1-based line of the first bad record.
class TraceFormatError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct TraceHeader {
  int episode = 0;
  std::string method;
  std::string realizer;
  AstConfig ast;
  double failure_threshold = 10.0;
  double terminal_downtrack = 200.0;
  SimState initial;
};

/// Numbers exactly as emitted in a summary line.
struct TraceSummary {
  Outcome outcome = Outcome::Horizon;
  int steps = 0;
  double total_reward = 0.0;
  double log_likelihood = 0.0;
  double delta_mean = 0.0;
  double max_abs_d = 0.0;
};

TraceSummary summarize(const EpisodeTrace& t);

class TraceWriter {
public:
  /// Truncates `path`; timing goes to `path` with ".timing.jsonl" appended
  /// in place of ".jsonl".
  explicit TraceWriter(const std::filesystem::path& path);

  /// `step_ms` may be empty; otherwise one entry per step.
  void write(const TraceHeader& header, const EpisodeTrace& trace, const std::vector<double>& step_ms = {});

private:
  std::ofstream out_;
  std::ofstream timing_;
};

std::filesystem::path timing_path(const std::filesystem::path& trace);

struct LoadedEpisode {
  TraceHeader header;
  /// Rebuilt from the recorded (delta, disturbance, pre, post) sequence with
  /// rewards and likelihoods recomputed; clean/perturbed images are not stored.
  EpisodeTrace trace;
  std::vector<double> logged_rewards;
  std::vector<double> logged_log_likelihood;
  std::vector<double> logged_rudder;
  std::optional<TraceSummary> logged_summary;
};

std::vector<LoadedEpisode> read_trace_file(const std::filesystem::path& path);

/// Trace files (*.jsonl, excluding timing sidecars) directly in `dir`, sorted.
std::vector<std::filesystem::path> trace_files(const std::filesystem::path& dir);

/// Every logged reward, cumulative likelihood and the summary equal the
/// recomputed values exactly.
bool recomputation_matches(const LoadedEpisode& e);

/// Feeds the recorded disturbances through a fresh simulator; returns the
/// largest |difference| over post-state fields and rudder commands.
double replay_deviation(Simulator& sim, const LoadedEpisode& e);

}  // namespace imgast
