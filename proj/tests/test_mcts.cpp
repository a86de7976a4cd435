#include "imgast/mcts.hpp"

#include <doctest.h>

#include <cmath>
#include <map>
#include <random>

using namespace imgast;

namespace {

const NetworkDefinition& controller() {
  static const NetworkDefinition net =
      compose_control_head(load_weights(IMGAST_DATA_DIR "/controller.json"), ControlGains{});
  return net;
}

MctsEdge edge(int action, double q, long long n) {
  MctsEdge e;
  e.action = action;
  e.q = q;
  e.n = n;
  e.shadow_sum = q * static_cast<double>(n);
  return e;
}

RolloutCacheConfig coarse_cache() {
  RolloutCacheConfig c;
  c.d_knots = {-10.0, -5.0, 0.0, 5.0, 10.0};
  c.theta_knots = {-30.0, 0.0, 30.0};
  c.phase_knots = 3;
  c.remaining_knots = {0.0, 100.0, 200.0};
  c.rollouts_per_knot = 1;
  return c;
}

struct Fixture {
  HeuristicRealizer heur{controller()};
  AstConfig ast;
  Fixture() { ast.delta_max = 0.09; }
  Mcts make(MctsConfig cfg, const RolloutCache* cache = nullptr) {
    if (cache == nullptr) cfg.use_cache = false;
    return Mcts(Simulator(controller(), SceneConfig{}, SimConfig{}), heur, heur, ast, cfg, cache);
  }
};

}  // namespace

TEST_SUITE("mcts") {

TEST_CASE("selection: widening criterion") {
  MctsConfig cfg;
  std::mt19937_64 rng(1);
  MctsNode node;
  node.unexpanded = {0, 1};
  const auto s = Mcts::select_action(node, cfg, 2, rng);
  CHECK(s.widen);
  CHECK((s.action == 0 || s.action == 1));

  node.n = 4;
  node.unexpanded = {2};
  node.edges = {edge(0, -5.0, 1), edge(1, -4.0, 2)};
  CHECK_FALSE(Mcts::select_action(node, cfg, 3, rng).widen);  // 2 < 1 * 4^0.5 fails
  node.n = 5;
  node.edges = {edge(0, -5.0, 1), edge(1, -4.0, 3)};
  CHECK(Mcts::select_action(node, cfg, 3, rng).widen);  // 2 < 5^0.5
}

TEST_CASE("selection: UCB example, greedy and ties") {
  MctsConfig cfg;
  cfg.c = 1.0;
  std::mt19937_64 rng(1);
  MctsNode node;
  node.n = 4;
  node.edges = {edge(0, -5.0, 1), edge(1, -4.0, 3)};
  const double s0 = -5.0 + std::sqrt(std::log(4.0) / 1.0);
  const double s1 = -4.0 + std::sqrt(std::log(4.0) / 3.0);
  CHECK(s0 == doctest::Approx(-3.823).epsilon(1e-3));
  CHECK(s1 == doctest::Approx(-3.320).epsilon(1e-3));
  CHECK(Mcts::ucb(node.edges[0], 4, 1.0) == s0);
  const auto sel = Mcts::select_action(node, cfg, 2, rng);
  CHECK_FALSE(sel.widen);
  CHECK(sel.action == 1);

  cfg.c = 0.0;
  node.edges = {edge(0, -4.5, 1), edge(1, -4.0, 3)};
  CHECK(Mcts::select_action(node, cfg, 2, rng).action == 1);
  cfg.c = 1e6;
  CHECK(Mcts::select_action(node, cfg, 2, rng).action == 0);  // exploration dominates

  cfg.c = 0.0;
  node.edges = {edge(1, -4.0, 2), edge(0, -4.0, 1)};
  CHECK(Mcts::select_action(node, cfg, 2, rng).action == 1);  // position of action index 0
}

TEST_CASE("backup: running means against a shadow oracle") {
  std::vector<MctsNode> tree(1);
  tree[0].edges = {edge(0, 0.0, 0)};
  tree[0].edges[0].reward = 0.0;
  tree[0].edges[0].child = 1;
  tree.emplace_back();
  Mcts::backup(tree, {{0, 0}}, 2.0);
  CHECK(tree[0].edges[0].q == 2.0);
  Mcts::backup(tree, {{0, 0}}, 4.0);
  CHECK(tree[0].edges[0].q == 3.0);
  CHECK(tree[0].n == 3);

  // chain root -> a -> b with two actions at each level
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1e4, 10.0);
  std::vector<MctsNode> t(7);
  std::map<std::pair<int, int>, std::vector<double>> seen;
  int next = 1;
  for (int p : {0, 1, 2}) {
    for (int a = 0; a < 2; ++a) {
      MctsEdge e;
      e.action = a;
      e.reward = u(rng) / 100.0;
      e.child = next++;
      t[static_cast<std::size_t>(p)].edges.push_back(e);
    }
  }
  for (int it = 0; it < 500; ++it) {
    std::vector<std::pair<int, int>> path;
    const int a0 = static_cast<int>(rng() % 2);
    path.emplace_back(0, a0);
    if (a0 == 0 && rng() % 3 != 0) path.emplace_back(1, static_cast<int>(rng() % 2));
    if (a0 == 1 && rng() % 3 != 0) path.emplace_back(2, static_cast<int>(rng() % 2));
    const double leaf = u(rng);
    Mcts::backup(t, path, leaf);
    // what the oracle expects to have been propagated, edge by edge
    double below = leaf;
    for (auto p = path.rbegin(); p != path.rend(); ++p) {
      const auto& e = t[static_cast<std::size_t>(p->first)].edges[static_cast<std::size_t>(p->second)];
      seen[*p].push_back(e.reward + below);
      below = e.q;
    }
  }
  for (const auto& [key, qs] : seen) {
    double sum = 0.0;
    for (double q : qs) sum += q;
    const double mean = sum / static_cast<double>(qs.size());
    const auto& e = t[static_cast<std::size_t>(key.first)].edges[static_cast<std::size_t>(key.second)];
    CHECK(e.n == static_cast<long long>(qs.size()));
    CHECK(std::abs(e.q - mean) <= 1e-12 * std::max(1.0, std::abs(mean)));
  }
  for (int p : {0, 1, 2}) {
    long long s = 0;
    for (const auto& e : t[static_cast<std::size_t>(p)].edges) s += e.n;
    CHECK(s == t[static_cast<std::size_t>(p)].n - 1);
  }
}

TEST_CASE("expand: deterministic, rewards recomputable, terminal forbidden") {
  Fixture fx;
  Mcts m = fx.make({});
  std::vector<MctsNode> a{m.root_node({1.0, 2.0, 30.0, 0.0})};
  std::vector<MctsNode> b = a;
  const int ca = m.expand(a, 0, 1);
  const int cb = m.expand(b, 0, 1);
  CHECK(a[static_cast<std::size_t>(ca)].state == b[static_cast<std::size_t>(cb)].state);
  CHECK(a[0].edges[0].realized.disturbance == b[0].edges[0].realized.disturbance);
  const auto& e = a[0].edges[0];
  CHECK(e.realized.delta_signed == 0.09);
  CHECK(e.reward == reward(e.record.post, 0.09, fx.ast, SimConfig{}));
  CHECK(a[0].unexpanded == std::vector<int>{0});

  std::vector<MctsNode> f{m.root_node({10.5, 0.0, 30.0, 0.0})};
  CHECK(f[0].terminal);
  CHECK_THROWS_AS(m.expand(f, 0, 0), std::logic_error);
}

TEST_CASE("search: budget 1 and determinism") {
  Fixture fx;
  MctsConfig cfg;
  cfg.iterations = 1;
  Mcts m = fx.make(cfg);
  const auto r = m.search({0.0, 0.0, 0.0, 0.0});
  CHECK(r.tree.size() == 2);
  REQUIRE(r.best);
  CHECK(r.best->steps.size() >= 1);
  CHECK(r.best->steps[0].record.post == r.tree[1].state);
  CHECK(trace_consistent(*r.best, fx.ast, SimConfig{}));
  CHECK(r.tree[0].edges[0].q == doctest::Approx(r.best->total_reward).epsilon(1e-12));

  cfg.iterations = 40;
  cfg.seed = 9;
  Mcts m1 = fx.make(cfg);
  Mcts m2 = fx.make(cfg);
  const auto r1 = m1.search({1.0, -3.0, 0.0, 0.0});
  const auto r2 = m2.search({1.0, -3.0, 0.0, 0.0});
  REQUIRE(r1.tree.size() == r2.tree.size());
  for (std::size_t i = 0; i < r1.tree.size(); ++i) {
    CHECK(r1.tree[i].n == r2.tree[i].n);
    CHECK(r1.tree[i].state == r2.tree[i].state);
    REQUIRE(r1.tree[i].edges.size() == r2.tree[i].edges.size());
    for (std::size_t k = 0; k < r1.tree[i].edges.size(); ++k) CHECK(r1.tree[i].edges[k].q == r2.tree[i].edges[k].q);
  }
  CHECK(r1.best_history == r2.best_history);
}

TEST_CASE("search: invariants and monotone best-so-far") {
  Fixture fx;
  MctsConfig cfg;
  cfg.iterations = 60;
  cfg.full_check_every = 1;
  Mcts m = fx.make(cfg);
  const auto r = m.search({-2.0, 4.0, 12.0, 0.0});
  CHECK(r.stats.invariant_checks == r.stats.iterations);
  for (const auto& n : r.tree) CHECK_NOTHROW(Mcts::check_node(n, cfg, 2));
  for (std::size_t i = 1; i < r.best_history.size(); ++i) CHECK(r.best_history[i] >= r.best_history[i - 1]);
  const auto rows = tree_edges(r.tree);
  CHECK(rows.size() == r.tree.size() - 1);

  MctsNode bad = r.tree[0];
  bad.n += 1;
  CHECK_THROWS_AS(Mcts::check_node(bad, cfg, 2), std::logic_error);
  bad = r.tree[0];
  bad.edges[0].q += 1.0;
  CHECK_THROWS_AS(Mcts::check_node(bad, cfg, 2), std::logic_error);
}

TEST_CASE("stop on failure with a large delta; two-action traces use delta_max") {
  Fixture fx;
  MctsConfig cfg;
  cfg.iterations = 200;
  cfg.stop_on_failure = true;
  Mcts m = fx.make(cfg);
  const auto r = m.search({0.0, 0.0, 0.0, 0.0});
  REQUIRE(r.best);
  CHECK(r.best->failed());
  CHECK(r.stats.iterations < 200);
  CHECK(r.best->delta_mean() == fx.ast.delta_max);
  CHECK(trace_consistent(*r.best, fx.ast, SimConfig{}));
}

TEST_CASE("rollout cache: knots reproduce live rollouts, off-grid error is bounded") {
  const auto& f = controller();
  AstConfig ast;
  ast.delta_max = 0.05;
  const auto cache =
      RolloutCache::build(f, SceneConfig{}, SimConfig{}, ast, RolloutPolicy::RandomUniform, 0.0, coarse_cache(), 3);
  CHECK(cache.knot_count() == 5 * 3 * 3 * 3);
  for (std::size_t i : {0ul, 17ul, 64ul, 100ul, 134ul}) {
    const auto k = cache.knot(i);
    CHECK(cache.live_knot_value(k) == cache.knot_value(k));
    const SimState s = cache.knot_state(k);
    CHECK(dash_phase(s.downtrack, cache.knot_scene(k)) ==
          doctest::Approx(SceneConfig{}.dash_period() * k.i_phase / 3).epsilon(1e-9));
  }
  // knots whose phase matches the real scene read back exactly
  const RolloutCache::Knot k{2, 1, 0, 2};
  const SimState at = cache.knot_state(k);
  if (dash_phase(at.downtrack, SceneConfig{}) == 0.0) CHECK(cache.value(at) == cache.knot_value(k));

  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> ud(-6.0, 6.0), ut(-15.0, 15.0), ux(0.0, 180.0);
  double dev = 0.0;
  for (int i = 0; i < 50; ++i) {
    const SimState s{ud(rng), ut(rng), ux(rng), 0.0};
    dev += std::abs(cache.value(s) - cache.live_value(s, 1000 + static_cast<std::uint64_t>(i)));
  }
  dev /= 50.0;
  MESSAGE("mean |cached - live| over 50 states: ", dev);
  CHECK(dev <= 0.2 * ast.penalty_alpha);
}

TEST_CASE("config validation") {
  MctsConfig c;
  c.widen_alpha = 1.0;
  CHECK_THROWS(c.validate());
  c = {};
  c.k = 0.0;
  CHECK_THROWS(c.validate());
  c = {};
  c.c = -1.0;
  CHECK_THROWS(c.validate());
  RolloutCacheConfig r;
  r.d_knots = {1.0, 0.0};
  CHECK_THROWS(r.validate());
}

}  // TEST_SUITE
