#include "imgast/ast.hpp"

#include <doctest.h>

#include <boost/math/distributions/normal.hpp>

#include <cmath>
#include <random>

using namespace imgast;

namespace {

const NetworkDefinition& controller() {
  static const NetworkDefinition net =
      compose_control_head(load_weights(IMGAST_DATA_DIR "/controller.json"), ControlGains{});
  return net;
}

double oracle_log_density(double x, double sigma) {
  return std::log(boost::math::pdf(boost::math::normal_distribution<double>(0.0, sigma), x));
}

Policy constant(double delta) {
  return [delta](int, const SimState&, const Image8x16&) { return delta; };
}

}  // namespace

TEST_SUITE("ast") {

TEST_CASE("action sets are symmetric linspaces") {
  AstConfig c;
  c.delta_max = 0.035;
  c.n_actions = 2;
  const auto a2 = action_set(c);
  REQUIRE(a2.size() == 2);
  CHECK(a2[0] == -0.035);
  CHECK(a2[1] == 0.035);

  c.n_actions = 3;
  const auto a3 = action_set(c);
  CHECK(a3[0] == -0.035);
  CHECK(a3[1] == 0.0);
  CHECK(a3[2] == 0.035);

  c.n_actions = 6;
  const auto a6 = action_set(c);
  REQUIRE(a6.size() == 6);
  for (std::size_t i = 1; i < a6.size(); ++i) CHECK(a6[i] - a6[i - 1] == doctest::Approx(0.014).epsilon(1e-12));
  for (std::size_t i = 0; i < a6.size(); ++i) CHECK(a6[i] == -a6[a6.size() - 1 - i]);

  c.n_actions = 1;
  CHECK_THROWS_AS(action_set(c), AstConfigError);
  c.n_actions = 2;
  c.delta_max = 0.0;
  CHECK_THROWS_AS(action_set(c), AstConfigError);
}

TEST_CASE("log_prob matches a reference normal density") {
  for (double sigma : {0.005, 0.01, 0.02, 0.1}) {
    for (double d : {0.0, 0.001, 0.014, 0.028, 0.035, 0.05}) {
      CHECK(std::abs(log_prob(d, sigma) - oracle_log_density(d, sigma)) <= 1e-12);
      CHECK(log_prob(-d, sigma) == log_prob(d, sigma));
    }
  }
  const double expected = -0.5 * std::log(2.0 * M_PI * 1e-4) - 0.035 * 0.035 / (2.0 * 1e-4);
  CHECK(std::abs(log_prob(0.035, 0.01) - expected) <= 1e-12);
  CHECK(std::abs(log_prob(0.035, 0.01) - oracle_log_density(0.035, 0.01)) <= 1e-12);
  CHECK(log_prob(0.035, 0.01) == doctest::Approx(-2.439).epsilon(1e-3));
}

TEST_CASE("reward branch table") {
  AstConfig a;
  SimConfig s;
  const double mode = -0.5 * std::log(2.0 * M_PI * a.sigma * a.sigma);

  CHECK(reward({10.5, 0.0, 50.0, 10.0}, 0.035, a, s) == 0.0);
  CHECK(reward({-10.5, 0.0, 205.0, 41.0}, 0.035, a, s) == 0.0);  // failure wins over terminal
  CHECK(std::abs(reward({1.0, 2.0, 50.0, 10.0}, 0.0, a, s) - mode) <= 1e-12);
  CHECK(reward({1.0, 2.0, 50.0, 10.0}, 0.035, a, s) == log_prob(0.035, a.sigma));
  CHECK(reward({2.0, 0.0, 201.0, 40.2}, 0.035, a, s) == -10800.0);
  CHECK(reward({-2.0, 0.0, 201.0, 40.2}, 0.035, a, s) == -10800.0);
  CHECK(reward({2.0, 0.0, 50.0, 10.0}, 0.035, a, s, true) == -10800.0);
  CHECK(reward({10.5, 0.0, 50.0, 10.0}, 0.035, a, s, true) == 0.0);
}

TEST_CASE("realize_action at a fixed state") {
  const auto& f = controller();
  const Image8x16 x = observe_state({1.0, 3.0, 20.0, 0.0}, SceneConfig{});
  const double f0 = forward_scalar(f, x.values());

  const AstAction z = realize_action(f, x, 0.0, {});
  CHECK(z.disturbance.max_abs() == 0.0);
  CHECK(z.achieved == 0.0);
  CHECK(z.queries == 0);

  const AstAction up = realize_action(f, x, 0.035, {});
  const AstAction down = realize_action(f, x, -0.035, {});
  CHECK(up.achieved > 0.0);
  CHECK(down.achieved < 0.0);
  CHECK(up.disturbance.max_abs() <= 0.035 + 1e-9);
  CHECK(down.disturbance.max_abs() <= 0.035 + 1e-9);
  CHECK(forward_scalar(f, (x + up.disturbance).values()) - f0 == up.achieved);
  CHECK(up.achieved <= up.eps_upper + 1e-9);
  CHECK(-down.achieved <= down.eps_upper + 1e-9);
  CHECK_FALSE(up.timed_out);
  MESSAGE("asymmetry at (1, 3, 20): +", up.achieved, " / ", down.achieved);
}

TEST_CASE("random baseline: single sample, determinism, dominated by the verifier") {
  const auto& f = controller();
  const Image8x16 x = observe_state({-2.0, 5.0, 37.0, 0.0}, SceneConfig{});
  const double f0 = forward_scalar(f, x.values());

  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(-0.035, 0.035);
  Image8x16 d;
  for (auto& p : d.px) p = u(rng);
  const AstAction one = random_baseline_action(f, x, 0.035, 1, 99);
  CHECK(one.disturbance == d);
  CHECK(one.achieved == forward_scalar(f, (x + d).values()) - f0);

  const AstAction a = random_baseline_action(f, x, 0.035, 5000, 3);
  const AstAction b = random_baseline_action(f, x, 0.035, 5000, 3);
  CHECK(a.disturbance == b.disturbance);
  CHECK(a.achieved == b.achieved);
  CHECK(a.disturbance.max_abs() <= 0.035);

  EpsSearchConfig cfg;
  const double sign = a.achieved >= 0.0 ? 1.0 : -1.0;
  const auto r = signed_disturbance(f, x.values(), sign * 0.035, cfg);
  CHECK(std::abs(a.achieved) <= r.eps_lower + cfg.tol);
  CHECK(std::abs(a.achieved) <= r.eps_upper);

  const AstAction dir = random_directed_action(f, x, -0.035, 500, 5);
  CHECK(dir.delta_signed == -0.035);
  CHECK(dir.achieved < 0.0);
  const auto down = signed_disturbance(f, x.values(), -0.035, cfg);
  CHECK(-dir.achieved <= down.eps_upper);
}

TEST_CASE("episodes: nominal, empty horizon, replay and likelihood accounting") {
  const auto& f = controller();
  Simulator sim(f, SceneConfig{}, SimConfig{});
  HeuristicRealizer heur(f);
  AstConfig cfg;

  const EpisodeTrace nominal = run_episode(sim, heur, constant(0.0), {0.0, 0.0, 0.0, 0.0}, cfg);
  CHECK(nominal.outcome == Outcome::Terminal);
  CHECK(nominal.steps.size() == 41);  // 5 m per step, terminal strictly past 200 m
  CHECK(trace_consistent(nominal, cfg, sim.config()));
  CHECK(nominal.total_reward < -cfg.penalty_alpha);

  AstConfig zero = cfg;
  zero.horizon = 0;
  const EpisodeTrace empty = run_episode(sim, heur, constant(0.035), {0.0, 0.0, 0.0, 0.0}, zero);
  CHECK(empty.steps.empty());
  CHECK(empty.outcome == Outcome::Horizon);
  CHECK(empty.delta_mean() == 0.0);

  cfg.delta_max = 0.15;
  const EpisodeTrace push = run_episode(sim, heur, constant(-0.15), {0.0, 0.0, 0.0, 0.0}, cfg);
  REQUIRE(push.failed());
  CHECK(push.delta_mean() == 0.15);
  CHECK(trace_consistent(push, cfg, sim.config()));
  double partial = 0.0;
  for (std::size_t i = 0; i + 1 < push.steps.size(); ++i) partial += log_prob(-0.15, cfg.sigma);
  CHECK(push.total_reward == doctest::Approx(partial).epsilon(1e-12));
  CHECK(push.steps.back().reward == 0.0);
  const double per = log_prob(0.15, cfg.sigma);
  CHECK(push.log_likelihood == doctest::Approx(per * static_cast<double>(push.steps.size())).epsilon(1e-12));
  for (const auto& st : push.steps) CHECK(st.action.disturbance.max_abs() <= 0.15 + 1e-9);

  const EpisodeTrace again = run_episode(sim, heur, constant(-0.15), {0.0, 0.0, 0.0, 0.0}, cfg);
  REQUIRE(again.steps.size() == push.steps.size());
  for (std::size_t i = 0; i < push.steps.size(); ++i) {
    CHECK(again.steps[i].record.post == push.steps[i].record.post);
    CHECK(again.steps[i].action.disturbance == push.steps[i].action.disturbance);
    CHECK(again.steps[i].reward == push.steps[i].reward);
  }

  EpisodeTrace tampered = push;
  tampered.steps[0].reward += 1e-9;
  CHECK_FALSE(trace_consistent(tampered, cfg, sim.config()));
}

TEST_CASE("horizon cut counts as terminal") {
  const auto& f = controller();
  Simulator sim(f, SceneConfig{}, SimConfig{});
  HeuristicRealizer heur(f);
  AstConfig cfg;
  cfg.horizon = 5;
  const EpisodeTrace t = run_episode(sim, heur, constant(0.0), {3.0, 0.0, 0.0, 0.0}, cfg);
  REQUIRE(t.steps.size() == 5);
  CHECK(t.outcome == Outcome::Horizon);
  CHECK(t.steps.back().reward == -cfg.penalty_alpha - cfg.penalty_beta * dist(t.steps.back().record.post, sim.config()));
  CHECK(trace_consistent(t, cfg, sim.config()));
}

TEST_CASE("sampling and memo realizers are reproducible") {
  const auto& f = controller();
  const SimState s{1.2, -4.0, 33.0, 6.6};
  const Image8x16 x = observe_state(s, SceneConfig{});
  SamplingRealizer a(f, 200, 11), b(f, 200, 11);
  const AstAction ra = a.realize(s, x, 0.035);
  CHECK(ra.disturbance == b.realize(s, x, 0.035).disturbance);
  CHECK(ra.disturbance == a.realize(s, x, 0.035).disturbance);
  CHECK(ra.achieved > 0.0);
  CHECK(ra.disturbance.max_abs() <= 0.035);

  auto inner = std::make_shared<HeuristicRealizer>(f);
  MemoRealizer memo(inner, f, MemoGrid{});
  const AstAction m1 = memo.realize(s, x, 0.035);
  const SimState near{1.3, -4.5, 33.4, 6.7};
  const Image8x16 xn = observe_state(near, SceneConfig{});
  const AstAction m2 = memo.realize(near, xn, 0.035);
  CHECK(memo.size() == 1);
  CHECK(memo.hits() == 1);
  CHECK(m2.disturbance == m1.disturbance);
  CHECK(m2.achieved == forward_scalar(f, (xn + m2.disturbance).values()) - forward_scalar(f, xn.values()));
  memo.realize(s, x, -0.035);
  CHECK(memo.size() == 2);
}

}  // TEST_SUITE
