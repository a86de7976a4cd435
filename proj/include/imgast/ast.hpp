// Stress-testing problem: discrete signed-delta actions, their likelihood,
// the failure-seeking reward, action realization and episode execution.
#pragma once

#include "imgast/epsearch.hpp"
#include "imgast/sim.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

namespace imgast {

class AstConfigError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

struct AstConfig {
  int n_actions = 2;
  double delta_max = 0.035;
  double sigma = 0.01;
  double penalty_alpha = 1e4;
  double penalty_beta = 1e2;
  int horizon = 60;  // control steps

  /// Throws AstConfigError on n_actions < 2 or non-positive scales.
  void validate() const;
};

/// n_actions evenly spaced values on [-delta_max, delta_max], endpoints included.
std::vector<double> action_set(const AstConfig& cfg);

/// log N(|delta| ; 0, sigma^2).
double log_prob(double delta_signed, double sigma);

/// 0 on failure, log_prob mid-episode, -alpha - beta * dist at a
/// non-failure terminal. Reaching the horizon counts as terminal.
double reward(const SimState& post, double delta_signed, const AstConfig& ast, const SimConfig& sim,
              bool at_horizon = false);

struct AstAction {
  double delta_signed = 0.0;
  Image8x16 disturbance;
  double achieved = 0.0;  // f(x + disturbance) - f(x), signed
  double eps_upper = 0.0; // proven bound on the change in the delta's direction (verifier only)
  bool timed_out = false;
  long long nodes = 0;
  int queries = 0;
};

/// Zero disturbance for delta 0, else the verifier-driven search in the
/// direction of delta's sign.
AstAction realize_action(const NetworkDefinition& f, const Image8x16& x, double delta_signed,
                         const EpsSearchConfig& cfg);

/// n uniform samples on the |delta|-box; keeps the largest |change|.
AstAction random_baseline_action(const NetworkDefinition& f, const Image8x16& x, double delta, int n,
                                 std::uint64_t seed);

/// n uniform samples; keeps the largest change in delta's direction.
AstAction random_directed_action(const NetworkDefinition& f, const Image8x16& x, double delta_signed, int n,
                                 std::uint64_t seed);

/// Turns an action value into a concrete disturbance at a state.
class Realizer {
public:
  virtual ~Realizer() = default;
  virtual AstAction realize(const SimState& s, const Image8x16& x, double delta_signed) = 0;
  virtual std::string name() const = 0;
};

class VerifierRealizer : public Realizer {
public:
  VerifierRealizer(NetworkDefinition f, EpsSearchConfig cfg) : f_(std::move(f)), cfg_(std::move(cfg)) {}
  AstAction realize(const SimState& s, const Image8x16& x, double delta_signed) override;
  std::string name() const override { return "verifier"; }

private:
  NetworkDefinition f_;
  EpsSearchConfig cfg_;
};

/// Sampling baseline in delta's direction; the sample stream is seeded from
/// the seed, the state and the delta so repeated calls agree.
class SamplingRealizer : public Realizer {
public:
  SamplingRealizer(NetworkDefinition f, int samples, std::uint64_t seed)
      : f_(std::move(f)), samples_(samples), seed_(seed) {}
  AstAction realize(const SimState& s, const Image8x16& x, double delta_signed) override;
  std::string name() const override { return "sampling"; }

private:
  NetworkDefinition f_;
  int samples_;
  std::uint64_t seed_;
};

/// The random baseline: n samples on the |delta|-box, largest |change|
/// whatever its sign. Seeded like SamplingRealizer.
class BaselineRealizer : public Realizer {
public:
  BaselineRealizer(NetworkDefinition f, int samples, std::uint64_t seed)
      : f_(std::move(f)), samples_(samples), seed_(seed) {}
  AstAction realize(const SimState& s, const Image8x16& x, double delta_signed) override;
  std::string name() const override { return "baseline"; }

private:
  NetworkDefinition f_;
  int samples_;
  std::uint64_t seed_;
};

/// heuristic_disturbance in delta's direction: fast, valid, not optimal.
class HeuristicRealizer : public Realizer {
public:
  explicit HeuristicRealizer(NetworkDefinition f) : f_(std::move(f)) {}
  AstAction realize(const SimState& s, const Image8x16& x, double delta_signed) override;
  std::string name() const override { return "heuristic"; }

private:
  const NetworkDefinition& negated();

  NetworkDefinition f_;
  std::optional<NetworkDefinition> neg_;
};

struct MemoGrid {
  double d_step = 1.0;        // m
  double theta_step = 4.0;    // deg
  double phase_step = 5.0;    // m of dash phase
  double dash_period = 15.0;  // m
  double centerline_offset = 0.0;
};

/// Reuses the disturbance realized at the first state seen in each
/// (d, theta, dash phase) cell; the achieved change is recomputed at the
/// actual observation.
class MemoRealizer : public Realizer {
public:
  MemoRealizer(std::shared_ptr<Realizer> inner, NetworkDefinition f, MemoGrid grid)
      : inner_(std::move(inner)), f_(std::move(f)), grid_(grid) {}
  AstAction realize(const SimState& s, const Image8x16& x, double delta_signed) override;
  std::string name() const override { return "memo(" + inner_->name() + ")"; }
  std::size_t size() const { return memo_.size(); }
  long long hits() const { return hits_; }

private:
  std::shared_ptr<Realizer> inner_;
  NetworkDefinition f_;
  MemoGrid grid_;
  std::map<std::tuple<long, long, long, long long>, AstAction> memo_;
  long long hits_ = 0;
};

enum class Outcome { Failure, Terminal, Horizon };
std::string to_string(Outcome o);

struct EpisodeStep {
  AstAction action;
  StepRecord record;
  double reward = 0.0;
  double log_likelihood = 0.0;  // cumulative through this step
};

struct EpisodeTrace {
  SimState initial;
  std::vector<EpisodeStep> steps;
  Outcome outcome = Outcome::Horizon;
  double total_reward = 0.0;
  double log_likelihood = 0.0;

  double delta_mean() const;  // mean |delta| over steps, 0 when empty
  double max_abs_d() const;
  bool failed() const { return outcome == Outcome::Failure; }
};

/// (step index, state, clean observation) -> signed delta.
using Policy = std::function<double(int, const SimState&, const Image8x16&)>;

/// Executes one episode from s0 until a terminal state or the horizon.
EpisodeTrace run_episode(Simulator& sim, Realizer& realizer, const Policy& policy, const SimState& s0,
                         const AstConfig& cfg);

/// Appends one realized step to a trace (shared by every search method).
void append_step(EpisodeTrace& trace, const AstAction& action, const StepRecord& record, const AstConfig& cfg,
                 const SimConfig& sim);

/// Recomputes outcome, rewards and likelihoods of a stored trace; true iff
/// all match exactly.
bool trace_consistent(const EpisodeTrace& trace, const AstConfig& cfg, const SimConfig& sim);

}  // namespace imgast
