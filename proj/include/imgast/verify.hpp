// Complete L-infinity robustness decision procedure for small ReLU networks:
// symbolic bound propagation, branch and bound on ReLU phases and exact leaf
// LPs. Answers whether some disturbance in the delta-box moves the scalar
// output by at least epsilon, returning a forward-checked witness if so.
#pragma once

#include "imgast/net.hpp"

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace imgast {

enum class Direction { Maximize, Minimize };
enum class QueryStatus { Sat, Unsat, Timeout };

std::string to_string(QueryStatus s);

struct VerifyOptions {
  long long node_budget = 1'000'000;
  double lp_tol = 1e-8;
  double witness_tol = 1e-6;
  /// Also require sum(disturbance) == 0 so the perturbed image keeps its mean.
  bool mean_preserving = false;
  /// Solve the triangle-relaxation LP at branching nodes to prune earlier.
  bool node_lp = true;
};

struct RobustnessQuery {
  NetworkDefinition net;  // scalar output
  std::vector<double> x;  // center, flattened
  double delta = 0.0;
  double epsilon = 0.0;
  Direction direction = Direction::Maximize;
  VerifyOptions options;
};

struct VerifyStats {
  long long nodes = 0;
  long long lps = 0;
  long long escalations = 0;  // leaves whose LP or witness recheck failed numerically
  double wall_ms = 0.0;
};

struct QueryResult {
  QueryStatus status = QueryStatus::Unsat;
  std::vector<double> witness;  // present iff Sat
  double achieved = 0.0;        // f(x + witness) - f(x), in the query's direction
  VerifyStats stats;
};

enum class Phase : std::int8_t { Unfixed, Active, Inactive };
using PhaseAssignment = std::vector<Phase>;  // one entry per ReLU, layer order

enum class NeuronPhase : std::int8_t { Active, Inactive, Unstable };

struct NeuronBounds {
  std::vector<double> lower;  // pre-activation, one per ReLU
  std::vector<double> upper;
  double output_lower = 0.0;
  double output_upper = 0.0;
  /// Coefficients of the output's upper linear envelope in the disturbance.
  std::vector<double> output_upper_coeffs;
  /// A fixed phase contradicts the bounds: the node's region is empty.
  bool infeasible = false;

  NeuronPhase phase(std::size_t k) const;
  std::size_t unstable_count() const;
};

/// Sound pre-activation bounds over {x + d : |d|_inf <= delta} restricted to
/// the region where the fixed phases hold. Bounds of an ancestor region, when
/// given, are intersected in as propagation proceeds, so children never get
/// looser bounds than their parent.
NeuronBounds propagate_bounds(const NetworkDefinition& net, std::span<const double> center, double delta,
                              const PhaseAssignment& assignment, const NeuronBounds* parent = nullptr);

struct BranchNode {
  PhaseAssignment assignment;
  std::shared_ptr<const NeuronBounds> parent_bounds;
  int depth = 0;
};

struct BranchChildren {
  BranchNode active;
  BranchNode inactive;
};

/// Index of the unfixed unstable neuron with the widest |lower * upper|
/// straddle (lowest index on ties). Throws std::logic_error if none.
std::size_t branch_neuron(const BranchNode& node, const NeuronBounds& bounds);
BranchChildren branch(const BranchNode& node, const NeuronBounds& bounds);

enum class LeafOutcome { Sat, NoSolution, NumericalFailure };

struct LeafResult {
  LeafOutcome outcome = LeafOutcome::NoSolution;
  double optimum = 0.0;  // max of f(x + d) - f(x) over the leaf region when solved
  std::vector<double> witness;
};

/// With every ReLU phase fixed the network is affine; maximize it over the
/// box intersected with the phase half-spaces. `phases` must hold no Unfixed.
/// Queries must be in maximize form (see maximize_form).
LeafResult leaf_decide(const RobustnessQuery& q, const PhaseAssignment& phases);

/// True iff |d|_inf <= delta + 1e-9 and f(x + d) - f(x) >= epsilon - 1e-6.
bool check_counterexample(const NetworkDefinition& net, std::span<const double> x, std::span<const double> d,
                          double delta, double epsilon);

/// The query with a Minimize direction rewritten on the negated network.
RobustnessQuery maximize_form(const RobustnessQuery& q);

QueryResult solve(const RobustnessQuery& q);

/// Cheap local maximizer of f(x + d) - f(x) over the box: starts at the sign
/// vertex of the root bound envelope and follows sign-gradient corners. No
/// optimality guarantee; used where a fast, valid disturbance is enough.
std::vector<double> heuristic_disturbance(const NetworkDefinition& net, std::span<const double> x, double delta);

/// Layerwise bound on |f(x + d) - f(x)| over the delta-box:
/// delta * prod_l max_row_l1(W_l).
double lipschitz_cap(const NetworkDefinition& net, double delta);

}  // namespace imgast
