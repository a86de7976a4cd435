// Parallel bisection over the output threshold: turns the SAT/UNSAT oracle
// into "largest output change reachable inside the delta-box".
#pragma once

#include "imgast/verify.hpp"

#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace imgast {

struct EpsSearchConfig {
  int parallel_queries = 10;  // N
  double tol = 0.003;
  std::optional<double> upper_bound;  // initial eps_upper; derived from bounds when absent
  /// Worker threads for one round. With 1 the round is answered in a
  /// bisection order and answers implied by earlier ones (monotonicity, or a
  /// witness that already reaches the threshold) are not re-solved; the
  /// resulting bounds are the same as solving all N.
  int threads = 1;
  VerifyOptions verify;

  /// Throws std::invalid_argument on N < 1, tol <= 0 or threads < 1.
  void validate() const;
};

struct EpsQuery {
  int round = 0;
  double epsilon = 0.0;
  QueryStatus status = QueryStatus::Unsat;
  bool implied = false;  // answered from an earlier result in the round
  double achieved = 0.0;
  VerifyStats stats;
};

struct EpsRound {
  double lower = 0.0;  // bracket after the round
  double upper = 0.0;
};

struct DisturbanceResult {
  double eps_lower = 0.0;
  double eps_upper = 0.0;
  std::vector<double> witness;  // achieves >= eps_lower; zeros when eps_lower == 0
  double achieved = 0.0;        // forward-checked change of the witness
  std::vector<EpsQuery> queries;
  std::vector<EpsRound> rounds;
  bool had_timeout = false;
  bool aborted = false;  // a round in which every query timed out
  long long nodes = 0;
};

/// One SAT/UNSAT decision at a threshold.
using EpsOracle = std::function<QueryResult(double epsilon)>;

/// Run indices 0..count-1 on up to `threads` workers; returns when all finish.
void parallel_for(int count, int threads, const std::function<void(int)>& body);

/// Algorithm core on an arbitrary oracle. `dim` sizes the zero witness.
DisturbanceResult bisect_epsilon(const EpsOracle& oracle, double upper, std::size_t dim, const EpsSearchConfig& cfg);

/// Largest eps (within tol) such that some |d|_inf <= delta gives f(x+d) - f(x) >= eps.
DisturbanceResult max_disturbance(const NetworkDefinition& f, std::span<const double> x, double delta,
                                  const EpsSearchConfig& cfg);

/// Doubling from tol until the oracle answers UNSAT (or times out); returns that eps.
double auto_upper_bound(const EpsOracle& oracle, double tol);
double auto_upper_bound(const NetworkDefinition& f, std::span<const double> x, double delta,
                        const EpsSearchConfig& cfg);

/// Analytic cap on the reachable change: the smaller of the layerwise
/// Lipschitz bound and the symbolic bound-propagation bound.
double analytic_upper_bound(const NetworkDefinition& f, std::span<const double> x, double delta);

/// Negative delta searches for the largest decrease of f (run on -f).
DisturbanceResult signed_disturbance(const NetworkDefinition& f, std::span<const double> x, double delta_signed,
                                     const EpsSearchConfig& cfg);

}  // namespace imgast
