#include "imgast/ast.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>
#include <random>

namespace imgast {

void AstConfig::validate() const {
  if (n_actions < 2) throw AstConfigError("ast: n_actions must be >= 2");
  if (!(delta_max > 0.0)) throw AstConfigError("ast: delta_max must be > 0");
  if (!(sigma > 0.0)) throw AstConfigError("ast: sigma must be > 0");
  if (!(penalty_alpha > 0.0) || !(penalty_beta > 0.0)) throw AstConfigError("ast: penalties must be > 0");
  if (horizon < 0) throw AstConfigError("ast: horizon must be >= 0");
}

std::vector<double> action_set(const AstConfig& cfg) {
  cfg.validate();
  std::vector<double> a(static_cast<std::size_t>(cfg.n_actions));
  const int last = cfg.n_actions - 1;
  for (int i = 0; i <= last; ++i) {
    // symmetric construction so a[i] == -a[last - i] bitwise
    const double t = static_cast<double>(2 * i - last) / last;
    a[static_cast<std::size_t>(i)] = t * cfg.delta_max;
  }
  return a;
}

double log_prob(double delta_signed, double sigma) {
  const double m = std::abs(delta_signed);
  return -0.5 * std::log(2.0 * std::numbers::pi * sigma * sigma) - m * m / (2.0 * sigma * sigma);
}

double reward(const SimState& post, double delta_signed, const AstConfig& ast, const SimConfig& sim, bool at_horizon) {
  if (is_failure(post, sim)) return 0.0;
  if (!is_terminal(post, sim) && !at_horizon) return log_prob(delta_signed, ast.sigma);
  return -ast.penalty_alpha - ast.penalty_beta * dist(post, sim);
}

namespace {

double change(const NetworkDefinition& f, const Image8x16& x, const Image8x16& d, double f0) {
  return forward_scalar(f, (x + d).values()) - f0;
}

Image8x16 as_image(std::span<const double> v) {
  Image8x16 img;
  std::copy(v.begin(), v.end(), img.px.begin());
  return img;
}

std::uint64_t mix(std::uint64_t h, std::uint64_t v) {
  h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  h ^= h >> 31;
  h *= 0xbf58476d1ce4e5b9ULL;
  return h ^ (h >> 29);
}

template <class Better>
AstAction sample_best(const NetworkDefinition& f, const Image8x16& x, double delta, int n, std::uint64_t seed,
                      Better better) {
  if (!(delta > 0.0)) throw std::invalid_argument("random sampling: delta must be > 0");
  if (n < 1) throw std::invalid_argument("random sampling: n must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-delta, delta);
  const double f0 = forward_scalar(f, x.values());
  AstAction best;
  bool have = false;
  Image8x16 d;
  for (int k = 0; k < n; ++k) {
    for (auto& p : d.px) p = u(rng);
    const double c = change(f, x, d, f0);
    if (!have || better(c, best.achieved)) {
      best.disturbance = d;
      best.achieved = c;
      have = true;
    }
  }
  return best;
}

}  // namespace

AstAction realize_action(const NetworkDefinition& f, const Image8x16& x, double delta_signed,
                         const EpsSearchConfig& cfg) {
  AstAction a;
  a.delta_signed = delta_signed;
  if (delta_signed == 0.0) return a;
  const DisturbanceResult r = signed_disturbance(f, x.values(), delta_signed, cfg);
  a.disturbance = as_image(r.witness);
  a.achieved = change(f, x, a.disturbance, forward_scalar(f, x.values()));
  a.eps_upper = r.eps_upper;
  a.timed_out = r.had_timeout;
  a.nodes = r.nodes;
  a.queries = static_cast<int>(r.queries.size());
  return a;
}

AstAction random_baseline_action(const NetworkDefinition& f, const Image8x16& x, double delta, int n,
                                 std::uint64_t seed) {
  AstAction a = sample_best(f, x, delta, n, seed, [](double c, double b) { return std::abs(c) > std::abs(b); });
  a.delta_signed = delta;
  return a;
}

AstAction random_directed_action(const NetworkDefinition& f, const Image8x16& x, double delta_signed, int n,
                                 std::uint64_t seed) {
  AstAction a;
  a.delta_signed = delta_signed;
  if (delta_signed == 0.0) return a;
  const double sign = delta_signed > 0.0 ? 1.0 : -1.0;
  a = sample_best(f, x, std::abs(delta_signed), n, seed, [sign](double c, double b) { return sign * c > sign * b; });
  a.delta_signed = delta_signed;
  return a;
}

AstAction VerifierRealizer::realize(const SimState&, const Image8x16& x, double delta_signed) {
  return realize_action(f_, x, delta_signed, cfg_);
}

AstAction SamplingRealizer::realize(const SimState& s, const Image8x16& x, double delta_signed) {
  std::uint64_t h = seed_;
  for (double v : {s.d, s.theta_deg, s.downtrack, delta_signed}) h = mix(h, std::bit_cast<std::uint64_t>(v));
  return random_directed_action(f_, x, delta_signed, samples_, h);
}

AstAction BaselineRealizer::realize(const SimState& s, const Image8x16& x, double delta_signed) {
  std::uint64_t h = seed_;
  for (double v : {s.d, s.theta_deg, s.downtrack, delta_signed}) h = mix(h, std::bit_cast<std::uint64_t>(v));
  return random_baseline_action(f_, x, std::abs(delta_signed), samples_, h);
}

AstAction HeuristicRealizer::realize(const SimState&, const Image8x16& x, double delta_signed) {
  AstAction a;
  a.delta_signed = delta_signed;
  if (delta_signed == 0.0) return a;
  const NetworkDefinition& g = delta_signed > 0.0 ? f_ : negated();
  a.disturbance = as_image(heuristic_disturbance(g, x.values(), std::abs(delta_signed)));
  a.achieved = change(f_, x, a.disturbance, forward_scalar(f_, x.values()));
  return a;
}

const NetworkDefinition& HeuristicRealizer::negated() {
  if (!neg_) neg_ = negate_output(f_);
  return *neg_;
}

AstAction MemoRealizer::realize(const SimState& s, const Image8x16& x, double delta_signed) {
  double phase = std::fmod(s.downtrack + grid_.centerline_offset, grid_.dash_period);
  if (phase < 0.0) phase += grid_.dash_period;
  const auto key = std::make_tuple(std::lround(s.d / grid_.d_step), std::lround(s.theta_deg / grid_.theta_step),
                                   std::lround(phase / grid_.phase_step) %
                                       std::max(1L, std::lround(grid_.dash_period / grid_.phase_step)),
                                   std::llround(delta_signed * 1e9));
  auto it = memo_.find(key);
  if (it == memo_.end()) {
    it = memo_.emplace(key, inner_->realize(s, x, delta_signed)).first;
    return it->second;
  }
  ++hits_;
  AstAction a = it->second;
  a.achieved = change(f_, x, a.disturbance, forward_scalar(f_, x.values()));
  a.nodes = 0;
  a.queries = 0;
  return a;
}

std::string to_string(Outcome o) {
  switch (o) {
    case Outcome::Failure: return "failure";
    case Outcome::Terminal: return "terminal";
    case Outcome::Horizon: return "horizon";
  }
  return "?";
}

double EpisodeTrace::delta_mean() const {
  if (steps.empty()) return 0.0;
  // offsets from the first magnitude keep a constant-delta episode exact
  const double a0 = std::abs(steps.front().action.delta_signed);
  double s = 0.0;
  for (const auto& st : steps) s += std::abs(st.action.delta_signed) - a0;
  return a0 + s / static_cast<double>(steps.size());
}

double EpisodeTrace::max_abs_d() const {
  double m = std::abs(initial.d);
  for (const auto& st : steps) m = std::max(m, std::abs(st.record.post.d));
  return m;
}

namespace {

Outcome classify(const SimState& s, const SimConfig& sim) {
  if (is_failure(s, sim)) return Outcome::Failure;
  if (is_terminal(s, sim)) return Outcome::Terminal;
  return Outcome::Horizon;
}

}  // namespace

void append_step(EpisodeTrace& trace, const AstAction& action, const StepRecord& record, const AstConfig& cfg,
                 const SimConfig& sim) {
  const bool at_horizon = static_cast<int>(trace.steps.size()) + 1 >= cfg.horizon;
  EpisodeStep st;
  st.action = action;
  st.record = record;
  st.reward = reward(record.post, action.delta_signed, cfg, sim, at_horizon);
  trace.log_likelihood += log_prob(action.delta_signed, cfg.sigma);
  st.log_likelihood = trace.log_likelihood;
  trace.total_reward += st.reward;
  trace.steps.push_back(std::move(st));
  trace.outcome = classify(record.post, sim);
}

EpisodeTrace run_episode(Simulator& sim, Realizer& realizer, const Policy& policy, const SimState& s0,
                         const AstConfig& cfg) {
  cfg.validate();
  EpisodeTrace trace;
  trace.initial = s0;
  sim.initialize(s0);
  trace.outcome = classify(s0, sim.config());
  for (int i = 0; i < cfg.horizon && !sim.is_failure() && !sim.is_terminal(); ++i) {
    try {
      const Image8x16 x = sim.observe();
      const double delta = policy(i, sim.state(), x);
      const AstAction a = realizer.realize(sim.state(), x, delta);
      const StepRecord rec = sim.step(a.disturbance);
      append_step(trace, a, rec, cfg, sim.config());
    } catch (const std::exception& e) {
      throw std::runtime_error("episode step " + std::to_string(i) + ": " + e.what());
    }
  }
  return trace;
}

bool trace_consistent(const EpisodeTrace& trace, const AstConfig& cfg, const SimConfig& sim) {
  EpisodeTrace re;
  re.initial = trace.initial;
  re.outcome = classify(trace.initial, sim);
  SimState prev = trace.initial;
  for (const auto& st : trace.steps) {
    if (!(st.record.pre == prev)) return false;
    append_step(re, st.action, st.record, cfg, sim);
    prev = st.record.post;
  }
  if (re.outcome != trace.outcome || re.total_reward != trace.total_reward ||
      re.log_likelihood != trace.log_likelihood)
    return false;
  for (std::size_t i = 0; i < re.steps.size(); ++i) {
    if (re.steps[i].reward != trace.steps[i].reward || re.steps[i].log_likelihood != trace.steps[i].log_likelihood)
      return false;
  }
  return true;
}

}  // namespace imgast
