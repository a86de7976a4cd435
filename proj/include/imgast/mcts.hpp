// Monte Carlo tree search with progressive widening over the stress-testing
// action set, plus the gridded rollout-value cache.
#pragma once

#include "imgast/ast.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace imgast {

enum class RolloutPolicy { RandomUniform, FixedDelta };
std::string to_string(RolloutPolicy p);

struct RolloutCacheConfig {
  std::vector<double> d_knots{-10.0, -7.5, -5.0, -2.5, 0.0, 2.5, 5.0, 7.5, 10.0};
  std::vector<double> theta_knots{-30.0, -20.0, -10.0, 0.0, 10.0, 20.0, 30.0};
  int phase_knots = 3;  // evenly spaced over one dash period
  std::vector<double> remaining_knots{0.0, 50.0, 100.0, 150.0, 200.0};  // meters to the terminal line
  int rollouts_per_knot = 2;
  int threads = 1;

  void validate() const;
};

/// Mean rollout returns on a (d, theta, dash phase, remaining downtrack)
/// grid, read back by multilinear interpolation (periodic in phase).
class RolloutCache {
public:
  struct Knot {
    int i_d = 0, i_theta = 0, i_phase = 0, i_rem = 0;
  };

  /// Knot rollouts use the heuristic realizer; knots run on cfg.threads workers.
  static RolloutCache build(const NetworkDefinition& f, const SceneConfig& scene, const SimConfig& sim,
                            const AstConfig& ast, RolloutPolicy policy, double fixed_delta,
                            const RolloutCacheConfig& cfg, std::uint64_t seed);

  double value(const SimState& s) const;

  std::size_t knot_count() const { return values_.size(); }
  Knot knot(std::size_t flat) const;
  /// State and scene (centerline offset) at which a knot's rollouts start.
  SimState knot_state(const Knot& k) const;
  SceneConfig knot_scene(const Knot& k) const;
  double knot_value(const Knot& k) const { return values_[flat(k)]; }
  /// Re-runs the knot's rollouts live; equals knot_value bitwise.
  double live_knot_value(const Knot& k) const;
  /// One seeded live rollout return from an arbitrary state.
  double live_value(const SimState& s, std::uint64_t seed) const;

  const RolloutCacheConfig& config() const { return cfg_; }

private:
  std::size_t flat(const Knot& k) const;
  double rollout(const SimState& s0, const SceneConfig& scene, std::uint64_t seed) const;
  double phase_of(double downtrack) const;

  NetworkDefinition f_;
  SceneConfig scene_;
  SimConfig sim_;
  AstConfig ast_;
  RolloutPolicy policy_ = RolloutPolicy::RandomUniform;
  double fixed_delta_ = 0.0;
  RolloutCacheConfig cfg_;
  std::uint64_t seed_ = 0;
  std::vector<double> values_;
};

struct MctsConfig {
  double k = 1.0;
  double widen_alpha = 0.5;
  double c = 100.0;
  int iterations = 2000;
  RolloutPolicy rollout = RolloutPolicy::RandomUniform;
  double rollout_fixed_delta = 0.0;
  bool use_cache = true;
  std::uint64_t seed = 1;
  bool stop_on_failure = false;
  bool check_invariants = true;
  int full_check_every = 50;  // iterations between whole-tree invariant sweeps

  void validate() const;
};

struct MctsEdge {
  int action = 0;  // index into the action set
  AstAction realized;
  StepRecord record;
  double reward = 0.0;
  int child = -1;
  long long n = 0;
  double q = 0.0;
  double shadow_sum = 0.0;  // plain sum of every q backed up through the edge
};

struct MctsNode {
  SimState state;
  int parent = -1;
  int parent_edge = -1;
  int depth = 0;
  long long n = 1;
  bool terminal = false;
  std::vector<MctsEdge> edges;
  std::vector<int> unexpanded;  // action indices not yet tried
};

struct MctsStats {
  int iterations = 0;
  int expansions = 0;
  int live_rollouts = 0;
  int invariant_checks = 0;
  long long verifier_nodes = 0;
  int verifier_timeouts = 0;
};

struct MctsResult {
  std::vector<MctsNode> tree;  // tree[0] is the root
  std::optional<EpisodeTrace> best;
  std::vector<double> best_history;  // best completed return after each iteration (-inf before any)
  MctsStats stats;
};

class Mcts {
public:
  /// `expander` realizes tree actions; `roller` realizes live rollout actions.
  Mcts(Simulator sim, Realizer& expander, Realizer& roller, AstConfig ast, MctsConfig cfg,
       const RolloutCache* cache = nullptr);

  MctsResult search(const SimState& root);

  /// Either a new action index (widening) or an existing edge's action.
  struct Selection {
    bool widen = false;
    int action = 0;  // action index for widen, edge position otherwise
  };
  static Selection select_action(const MctsNode& node, const MctsConfig& cfg, int n_actions, std::mt19937_64& rng);
  static double ucb(const MctsEdge& e, long long parent_n, double c);

  /// Throws std::logic_error if any tree invariant is violated.
  static void check_node(const MctsNode& node, const MctsConfig& cfg, int n_actions);

  /// Fresh root with every action unexpanded (none when terminal).
  MctsNode root_node(const SimState& s) const;

  /// Realizes `action` (an action-set index) at `node` and attaches the child.
  /// Throws std::logic_error on a terminal node.
  int expand(std::vector<MctsNode>& tree, int node, int action);

  /// Bottom-up update along (node, edge position) pairs from the root.
  static void backup(std::vector<MctsNode>& tree, const std::vector<std::pair<int, int>>& path, double leaf_q);

private:
  /// Cached or live estimate; a live rollout also yields the completed trace.
  double rollout_value(const std::vector<MctsNode>& tree, int leaf, std::optional<EpisodeTrace>& completed);
  EpisodeTrace live_rollout(const MctsNode& leaf);
  EpisodeTrace trace_of(const std::vector<MctsNode>& tree, int leaf) const;
  EpisodeTrace complete_with_rollout(const std::vector<MctsNode>& tree, int leaf);

  Simulator sim_;
  Realizer& expander_;
  Realizer& roller_;
  AstConfig ast_;
  MctsConfig cfg_;
  const RolloutCache* cache_;
  std::vector<double> actions_;
  std::mt19937_64 rng_;
  MctsStats stats_;
};

/// Edge list of a tree: parent state, delta, N, Q, child state.
struct TreeEdgeRow {
  int parent = 0;
  int child = 0;
  SimState parent_state;
  double delta = 0.0;
  long long n = 0;
  double q = 0.0;
  double reward = 0.0;
  SimState child_state;
};
std::vector<TreeEdgeRow> tree_edges(const std::vector<MctsNode>& tree);

}  // namespace imgast
