#include "imgast/mcts.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace imgast {

std::string to_string(RolloutPolicy p) {
  return p == RolloutPolicy::RandomUniform ? "random-uniform" : "fixed-delta";
}

namespace {

std::uint64_t mix(std::uint64_t h, std::uint64_t v) {
  h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  h ^= h >> 31;
  h *= 0xbf58476d1ce4e5b9ULL;
  return h ^ (h >> 29);
}

bool strictly_increasing(const std::vector<double>& v) {
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (!(v[i] > v[i - 1])) return false;
  }
  return !v.empty();
}

// Index i and weight t with x = (1 - t) * knots[i] + t * knots[i + 1], clamped.
std::pair<std::size_t, double> bracket(const std::vector<double>& knots, double x) {
  if (knots.size() == 1) return {0, 0.0};
  x = std::clamp(x, knots.front(), knots.back());
  auto it = std::upper_bound(knots.begin(), knots.end(), x);
  std::size_t i = static_cast<std::size_t>(it - knots.begin());
  i = i == 0 ? 0 : i - 1;
  if (i + 1 >= knots.size()) i = knots.size() - 2;
  return {i, (x - knots[i]) / (knots[i + 1] - knots[i])};
}

Policy rollout_policy(RolloutPolicy p, double fixed, const std::vector<double>& actions, std::mt19937_64& rng) {
  if (p == RolloutPolicy::FixedDelta) return [fixed](int, const SimState&, const Image8x16&) { return fixed; };
  return [&actions, &rng](int, const SimState&, const Image8x16&) {
    std::uniform_int_distribution<std::size_t> pick(0, actions.size() - 1);
    return actions[pick(rng)];
  };
}

}  // namespace

void RolloutCacheConfig::validate() const {
  if (!strictly_increasing(d_knots) || !strictly_increasing(theta_knots) || !strictly_increasing(remaining_knots))
    throw std::invalid_argument("rollout cache: knot lists must be nonempty and strictly increasing");
  if (phase_knots < 1) throw std::invalid_argument("rollout cache: phase_knots must be >= 1");
  if (rollouts_per_knot < 1) throw std::invalid_argument("rollout cache: rollouts_per_knot must be >= 1");
  if (threads < 1) throw std::invalid_argument("rollout cache: threads must be >= 1");
}

RolloutCache RolloutCache::build(const NetworkDefinition& f, const SceneConfig& scene, const SimConfig& sim,
                                 const AstConfig& ast, RolloutPolicy policy, double fixed_delta,
                                 const RolloutCacheConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ast.validate();
  RolloutCache c;
  c.f_ = f;
  c.scene_ = scene;
  c.sim_ = sim;
  c.ast_ = ast;
  c.policy_ = policy;
  c.fixed_delta_ = fixed_delta;
  c.cfg_ = cfg;
  c.seed_ = seed;
  const std::size_t n = cfg.d_knots.size() * cfg.theta_knots.size() * static_cast<std::size_t>(cfg.phase_knots) *
                        cfg.remaining_knots.size();
  c.values_.assign(n, 0.0);
  parallel_for(static_cast<int>(n), cfg.threads, [&c](int i) {
    c.values_[static_cast<std::size_t>(i)] = c.live_knot_value(c.knot(static_cast<std::size_t>(i)));
  });
  return c;
}

std::size_t RolloutCache::flat(const Knot& k) const {
  const std::size_t nt = cfg_.theta_knots.size(), np = static_cast<std::size_t>(cfg_.phase_knots),
                    nr = cfg_.remaining_knots.size();
  return ((static_cast<std::size_t>(k.i_d) * nt + static_cast<std::size_t>(k.i_theta)) * np +
          static_cast<std::size_t>(k.i_phase)) * nr + static_cast<std::size_t>(k.i_rem);
}

RolloutCache::Knot RolloutCache::knot(std::size_t flat) const {
  const std::size_t nt = cfg_.theta_knots.size(), np = static_cast<std::size_t>(cfg_.phase_knots),
                    nr = cfg_.remaining_knots.size();
  Knot k;
  k.i_rem = static_cast<int>(flat % nr);
  flat /= nr;
  k.i_phase = static_cast<int>(flat % np);
  flat /= np;
  k.i_theta = static_cast<int>(flat % nt);
  k.i_d = static_cast<int>(flat / nt);
  return k;
}

SimState RolloutCache::knot_state(const Knot& k) const {
  SimState s;
  s.d = cfg_.d_knots[static_cast<std::size_t>(k.i_d)];
  s.theta_deg = cfg_.theta_knots[static_cast<std::size_t>(k.i_theta)];
  s.downtrack = sim_.terminal_downtrack - cfg_.remaining_knots[static_cast<std::size_t>(k.i_rem)];
  return s;
}

SceneConfig RolloutCache::knot_scene(const Knot& k) const {
  SceneConfig sc = scene_;
  const double phase = scene_.dash_period() * k.i_phase / cfg_.phase_knots;
  sc.centerline_offset = phase - knot_state(k).downtrack;
  return sc;
}

double RolloutCache::rollout(const SimState& s0, const SceneConfig& scene, std::uint64_t seed) const {
  Simulator sim(f_, scene, sim_);
  HeuristicRealizer realizer(f_);
  std::mt19937_64 rng(seed);
  const auto actions = action_set(ast_);
  return run_episode(sim, realizer, rollout_policy(policy_, fixed_delta_, actions, rng), s0, ast_).total_reward;
}

double RolloutCache::live_knot_value(const Knot& k) const {
  const SimState s = knot_state(k);
  const SceneConfig sc = knot_scene(k);
  double sum = 0.0;
  for (int r = 0; r < cfg_.rollouts_per_knot; ++r) {
    sum += rollout(s, sc, mix(mix(seed_, flat(k)), static_cast<std::uint64_t>(r)));
  }
  return sum / cfg_.rollouts_per_knot;
}

double RolloutCache::live_value(const SimState& s, std::uint64_t seed) const { return rollout(s, scene_, seed); }

double RolloutCache::phase_of(double downtrack) const { return dash_phase(downtrack, scene_); }

double RolloutCache::value(const SimState& s) const {
  const auto [id, td] = bracket(cfg_.d_knots, s.d);
  const auto [it, tt] = bracket(cfg_.theta_knots, s.theta_deg);
  const auto [ir, tr] = bracket(cfg_.remaining_knots, sim_.terminal_downtrack - s.downtrack);
  const int np = cfg_.phase_knots;
  const double spacing = scene_.dash_period() / np;
  const double pos = phase_of(s.downtrack) / spacing;
  int ip = std::min(static_cast<int>(std::floor(pos)), np - 1);
  const double tp = np == 1 ? 0.0 : pos - ip;

  const auto step = [](std::size_t i, std::size_t n) { return n == 1 ? i : i + 1; };
  double v = 0.0;
  for (int corner = 0; corner < 16; ++corner) {
    const bool bd = corner & 1, bt = corner & 2, bp = corner & 4, br = corner & 8;
    const double w = (bd ? td : 1.0 - td) * (bt ? tt : 1.0 - tt) * (bp ? tp : 1.0 - tp) * (br ? tr : 1.0 - tr);
    if (w == 0.0) continue;
    Knot k;
    k.i_d = static_cast<int>(bd ? step(id, cfg_.d_knots.size()) : id);
    k.i_theta = static_cast<int>(bt ? step(it, cfg_.theta_knots.size()) : it);
    k.i_phase = bp ? (ip + 1) % np : ip;
    k.i_rem = static_cast<int>(br ? step(ir, cfg_.remaining_knots.size()) : ir);
    v += w * values_[flat(k)];
  }
  return v;
}

void MctsConfig::validate() const {
  if (!(k > 0.0)) throw std::invalid_argument("mcts: k must be > 0");
  if (!(widen_alpha > 0.0 && widen_alpha < 1.0)) throw std::invalid_argument("mcts: widen_alpha must be in (0, 1)");
  if (!(c >= 0.0)) throw std::invalid_argument("mcts: c must be >= 0");
  if (iterations < 1) throw std::invalid_argument("mcts: iterations must be >= 1");
  if (full_check_every < 1) throw std::invalid_argument("mcts: full_check_every must be >= 1");
}

Mcts::Mcts(Simulator sim, Realizer& expander, Realizer& roller, AstConfig ast, MctsConfig cfg,
           const RolloutCache* cache)
    : sim_(std::move(sim)),
      expander_(expander),
      roller_(roller),
      ast_(ast),
      cfg_(cfg),
      cache_(cache),
      actions_(action_set(ast)),
      rng_(cfg.seed) {
  cfg_.validate();
  if (cfg_.use_cache && cache_ == nullptr) throw std::invalid_argument("mcts: use_cache requires a rollout cache");
}

double Mcts::ucb(const MctsEdge& e, long long parent_n, double c) {
  return e.q + c * std::sqrt(std::log(static_cast<double>(parent_n)) / static_cast<double>(e.n));
}

Mcts::Selection Mcts::select_action(const MctsNode& node, const MctsConfig& cfg, int n_actions, std::mt19937_64& rng) {
  (void)n_actions;
  const double limit = cfg.k * std::pow(static_cast<double>(node.n), cfg.widen_alpha);
  if (!node.unexpanded.empty() && static_cast<double>(node.edges.size()) < limit) {
    std::uniform_int_distribution<std::size_t> pick(0, node.unexpanded.size() - 1);
    return {true, node.unexpanded[pick(rng)]};
  }
  if (node.edges.empty()) throw std::logic_error("mcts: nothing to select at a node without actions");
  int best = 0;
  double best_score = ucb(node.edges[0], node.n, cfg.c);
  for (int i = 1; i < static_cast<int>(node.edges.size()); ++i) {
    const double s = ucb(node.edges[static_cast<std::size_t>(i)], node.n, cfg.c);
    if (s > best_score ||
        (s == best_score && node.edges[static_cast<std::size_t>(i)].action < node.edges[static_cast<std::size_t>(best)].action)) {
      best = i;
      best_score = s;
    }
  }
  return {false, best};
}

void Mcts::check_node(const MctsNode& node, const MctsConfig& cfg, int n_actions) {
  long long sum = 0;
  for (const auto& e : node.edges) {
    sum += e.n;
    if (!std::isfinite(e.q)) throw std::logic_error("mcts invariant: non-finite Q");
    if (e.n > 0) {
      const double mean = e.shadow_sum / static_cast<double>(e.n);
      if (std::abs(e.q - mean) > 1e-12 * std::max(1.0, std::abs(mean)))
        throw std::logic_error("mcts invariant: Q differs from the mean of backed-up returns");
    }
  }
  if (sum != node.n - 1) throw std::logic_error("mcts invariant: sum of N(s,a) != N(s) - 1");
  const double cap = std::ceil(cfg.k * std::pow(static_cast<double>(node.n), cfg.widen_alpha));
  if (static_cast<double>(node.edges.size()) > cap || static_cast<int>(node.edges.size()) > n_actions)
    throw std::logic_error("mcts invariant: widening bound exceeded");
}

int Mcts::expand(std::vector<MctsNode>& tree, int node, int action) {
  if (tree[static_cast<std::size_t>(node)].terminal) throw std::logic_error("mcts: cannot expand a terminal node");
  const MctsNode parent = tree[static_cast<std::size_t>(node)];
  sim_.initialize(parent.state);
  const Image8x16 x = sim_.observe();
  MctsEdge e;
  e.action = action;
  e.realized = expander_.realize(parent.state, x, actions_[static_cast<std::size_t>(action)]);
  e.record = sim_.step(e.realized.disturbance);
  MctsNode child;
  child.state = e.record.post;
  child.parent = node;
  child.parent_edge = static_cast<int>(parent.edges.size());
  child.depth = parent.depth + 1;
  const bool at_horizon = child.depth >= ast_.horizon;
  child.terminal = at_horizon || sim_.is_terminal();
  e.reward = reward(child.state, e.realized.delta_signed, ast_, sim_.config(), at_horizon);
  if (!child.terminal) {
    for (int a = 0; a < static_cast<int>(actions_.size()); ++a) child.unexpanded.push_back(a);
  }
  e.child = static_cast<int>(tree.size());
  ++stats_.expansions;
  stats_.verifier_nodes += e.realized.nodes;
  if (e.realized.timed_out) ++stats_.verifier_timeouts;

  auto& p = tree[static_cast<std::size_t>(node)];
  p.unexpanded.erase(std::find(p.unexpanded.begin(), p.unexpanded.end(), action));
  p.edges.push_back(std::move(e));
  tree.push_back(std::move(child));
  return static_cast<int>(tree.size()) - 1;
}

EpisodeTrace Mcts::live_rollout(const MctsNode& leaf) {
  AstConfig remaining = ast_;
  remaining.horizon = std::max(0, ast_.horizon - leaf.depth);
  ++stats_.live_rollouts;
  return run_episode(sim_, roller_, rollout_policy(cfg_.rollout, cfg_.rollout_fixed_delta, actions_, rng_),
                     leaf.state, remaining);
}

double Mcts::rollout_value(const std::vector<MctsNode>& tree, int leaf, std::optional<EpisodeTrace>& completed) {
  const MctsNode& node = tree[static_cast<std::size_t>(leaf)];
  if (cfg_.use_cache) return cache_->value(node.state);
  const EpisodeTrace tail = live_rollout(node);
  EpisodeTrace full = trace_of(tree, leaf);
  for (const auto& st : tail.steps) append_step(full, st.action, st.record, ast_, sim_.config());
  completed = std::move(full);
  return tail.total_reward;
}

void Mcts::backup(std::vector<MctsNode>& tree, const std::vector<std::pair<int, int>>& path, double leaf_q) {
  double q = leaf_q;
  for (auto it = path.rbegin(); it != path.rend(); ++it) {
    auto& node = tree[static_cast<std::size_t>(it->first)];
    auto& e = node.edges[static_cast<std::size_t>(it->second)];
    q = e.reward + q;
    ++e.n;
    e.q += (q - e.q) / static_cast<double>(e.n);
    e.shadow_sum += q;
    ++node.n;
    q = e.q;
  }
}

EpisodeTrace Mcts::trace_of(const std::vector<MctsNode>& tree, int leaf) const {
  std::vector<const MctsEdge*> edges;
  for (int n = leaf; tree[static_cast<std::size_t>(n)].parent >= 0; n = tree[static_cast<std::size_t>(n)].parent) {
    const auto& node = tree[static_cast<std::size_t>(n)];
    edges.push_back(&tree[static_cast<std::size_t>(node.parent)].edges[static_cast<std::size_t>(node.parent_edge)]);
  }
  std::reverse(edges.begin(), edges.end());
  EpisodeTrace t;
  t.initial = tree[0].state;
  t.outcome = is_failure(t.initial, sim_.config())    ? Outcome::Failure
              : is_terminal(t.initial, sim_.config()) ? Outcome::Terminal
                                                      : Outcome::Horizon;
  for (const MctsEdge* e : edges) append_step(t, e->realized, e->record, ast_, sim_.config());
  return t;
}

EpisodeTrace Mcts::complete_with_rollout(const std::vector<MctsNode>& tree, int leaf) {
  EpisodeTrace full = trace_of(tree, leaf);
  const auto& node = tree[static_cast<std::size_t>(leaf)];
  if (node.terminal) return full;
  const EpisodeTrace tail = live_rollout(node);
  for (const auto& st : tail.steps) append_step(full, st.action, st.record, ast_, sim_.config());
  return full;
}

MctsNode Mcts::root_node(const SimState& s) const {
  MctsNode r;
  r.state = s;
  r.terminal = is_terminal(s, sim_.config()) || ast_.horizon == 0;
  if (!r.terminal) {
    for (int a = 0; a < static_cast<int>(actions_.size()); ++a) r.unexpanded.push_back(a);
  }
  return r;
}

MctsResult Mcts::search(const SimState& root) {
  stats_ = {};
  rng_.seed(cfg_.seed);
  const int n_actions = static_cast<int>(actions_.size());
  MctsResult res;
  auto& tree = res.tree;
  tree.push_back(root_node(root));

  double best_return = -std::numeric_limits<double>::infinity();
  const auto consider = [&](EpisodeTrace t) {
    if (!res.best || t.total_reward > best_return) {
      best_return = t.total_reward;
      res.best = std::move(t);
    }
  };

  for (int iter = 0; iter < cfg_.iterations && !tree[0].terminal; ++iter) {
    std::vector<std::pair<int, int>> path;
    std::optional<EpisodeTrace> completed;
    int cur = 0;
    double leaf_q = 0.0;
    while (true) {
      const MctsNode& node = tree[static_cast<std::size_t>(cur)];
      if (node.terminal) break;
      const Selection sel = select_action(node, cfg_, n_actions, rng_);
      if (sel.widen) {
        const int edge = static_cast<int>(node.edges.size());
        const int child = expand(tree, cur, sel.action);
        path.emplace_back(cur, edge);
        cur = child;
        if (!tree[static_cast<std::size_t>(child)].terminal) leaf_q = rollout_value(tree, child, completed);
        break;
      }
      path.emplace_back(cur, sel.action);
      cur = node.edges[static_cast<std::size_t>(sel.action)].child;
    }
    backup(tree, path, leaf_q);
    if (tree[static_cast<std::size_t>(cur)].terminal) completed = trace_of(tree, cur);
    if (completed) consider(std::move(*completed));
    res.best_history.push_back(best_return);
    ++stats_.iterations;

    if (cfg_.check_invariants) {
      for (const auto& [n, e] : path) check_node(tree[static_cast<std::size_t>(n)], cfg_, n_actions);
      const auto& h = res.best_history;
      if (h.size() >= 2 && h[h.size() - 1] < h[h.size() - 2])
        throw std::logic_error("mcts invariant: best-so-far return decreased");
      ++stats_.invariant_checks;
      if ((iter + 1) % cfg_.full_check_every == 0) {
        for (const auto& n : tree) check_node(n, cfg_, n_actions);
      }
    }
    if (cfg_.stop_on_failure && res.best && res.best->failed()) break;
  }
  if (cfg_.check_invariants) {
    for (const auto& n : tree) check_node(n, cfg_, n_actions);
  }

  if (!res.best) {
    // nothing completed in the tree: follow the greedy path and finish it live
    int cur = 0;
    while (!tree[static_cast<std::size_t>(cur)].edges.empty()) {
      const auto& edges = tree[static_cast<std::size_t>(cur)].edges;
      std::size_t b = 0;
      for (std::size_t i = 1; i < edges.size(); ++i) {
        if (edges[i].q > edges[b].q) b = i;
      }
      cur = edges[b].child;
    }
    res.best = complete_with_rollout(tree, cur);
  }
  res.stats = stats_;
  return res;
}

std::vector<TreeEdgeRow> tree_edges(const std::vector<MctsNode>& tree) {
  std::vector<TreeEdgeRow> rows;
  for (std::size_t p = 0; p < tree.size(); ++p) {
    for (const auto& e : tree[p].edges) {
      rows.push_back({static_cast<int>(p), e.child, tree[p].state, e.realized.delta_signed, e.n, e.q, e.reward,
                      tree[static_cast<std::size_t>(e.child)].state});
    }
  }
  return rows;
}

}  // namespace imgast
