#include "imgast/sim.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

using namespace imgast;

namespace {

const std::filesystem::path kData = IMGAST_DATA_DIR;

Simulator controller_sim() {
  return Simulator(compose_control_head(load_weights(kData / "controller.json"), {}), SceneConfig{}, SimConfig{});
}

// RK4 on (d, theta, downtrack) with the rudder yawing toward negative d
SimState fine_oracle(SimState s, double rudder, const SimConfig& cfg, double h) {
  const double deg = std::numbers::pi / 180.0;
  const double rate = -cfg.heading_rate_gain * rudder;
  const auto deriv = [&](double th) { return std::pair{cfg.speed * std::sin(th * deg), cfg.speed * std::cos(th * deg)}; };
  const int n = static_cast<int>(std::lround(cfg.control_period / h));
  for (int k = 0; k < n; ++k) {
    const auto k1 = deriv(s.theta_deg);
    const auto k2 = deriv(s.theta_deg + 0.5 * h * rate);
    const auto k4 = deriv(s.theta_deg + h * rate);
    s.d += h / 6 * (k1.first + 4 * k2.first + k4.first);
    s.downtrack += h / 6 * (k1.second + 4 * k2.second + k4.second);
    s.theta_deg += h * rate;
  }
  s.t += cfg.control_period;
  return s;
}

}  // namespace

TEST_SUITE("sim") {

TEST_CASE("failure, terminal and dist boundaries") {
  const SimConfig c;
  CHECK_FALSE(is_failure({10.0, 0, 0, 0}, c));
  CHECK(is_failure({-10.01, 0, 0, 0}, c));
  CHECK(is_failure({11.0, 0, 0, 0}, c));
  CHECK_FALSE(is_terminal({0, 0, 200.0, 0}, c));
  CHECK(is_terminal({0, 0, 201.0, 0}, c));
  CHECK(is_terminal({-10.5, 0, 10.0, 0}, c));
  CHECK(dist({0, 0, 0, 0}, c) == 10.0);
  CHECK(dist({10, 0, 0, 0}, c) == 0.0);
  CHECK(dist({-4.7, 0, 0, 0}, c) == doctest::Approx(5.3).epsilon(1e-15));
  CHECK(dist({-12, 0, 0, 0}, c) == 0.0);

  Simulator sim = controller_sim();
  sim.initialize({11.0, 0, 0, 0});
  CHECK(sim.is_failure());
  sim.initialize({0, 0, 201.0, 0});
  CHECK(sim.is_terminal());
  CHECK_THROWS_AS(sim.initialize({NAN, 0, 0, 0}), SimError);
}

TEST_CASE("integrate_dynamics: straight lines and the fine-step oracle") {
  const SimConfig c;
  const SimState z = integrate_dynamics({0, 0, 0, 0}, 0.0, c);
  CHECK(z.d == 0.0);
  CHECK(z.theta_deg == 0.0);
  CHECK(z.downtrack == doctest::Approx(5.0).epsilon(1e-14));
  CHECK(z.t == 1.0);

  const SimState s30 = integrate_dynamics({0, 30, 0, 0}, 0.0, c);
  CHECK(s30.d == doctest::Approx(2.5).epsilon(1e-12));
  CHECK(s30.theta_deg == 30.0);

  for (double r : {1.0, -0.6, 0.25}) {
    for (const SimState& s0 : {SimState{0, 0, 0, 0}, SimState{-3, 17, 42, 3}}) {
      const SimState a = integrate_dynamics(s0, r, c);
      const SimState b = fine_oracle(s0, r, c, 0.001);
      CHECK(std::abs(a.d - b.d) <= 1e-3);
      CHECK(std::abs(a.theta_deg - b.theta_deg) <= 1e-3);
      CHECK(std::abs(a.downtrack - b.downtrack) <= 1e-3);
    }
  }
}

TEST_CASE("dynamics are mirror symmetric") {
  const SimConfig c;
  for (const auto& [s, r] : {std::pair{SimState{2.5, 12, 7, 0}, 0.4}, std::pair{SimState{-7, -3, 0, 2}, -1.0}}) {
    const SimState a = integrate_dynamics(s, r, c);
    const SimState b = integrate_dynamics({-s.d, -s.theta_deg, s.downtrack, s.t}, -r, c);
    CHECK(b.d == -a.d);
    CHECK(b.theta_deg == -a.theta_deg);
    CHECK(b.downtrack == a.downtrack);
  }
}

TEST_CASE("step: pipeline record and determinism") {
  Simulator a = controller_sim();
  Simulator b = controller_sim();
  a.initialize({0, 0, 0, 0});
  b.initialize({0, 0, 0, 0});
  const Image8x16 zero;
  for (int k = 0; k < 2; ++k) {
    const StepRecord ra = a.step(zero);
    const StepRecord rb = b.step(zero);
    CHECK(ra.post == rb.post);
    CHECK(ra.rudder == rb.rudder);
  }

  Image8x16 d;
  for (std::size_t i = 0; i < d.px.size(); ++i) d.px[i] = (i % 3 == 0 ? 0.02 : -0.01);
  a.initialize({1.0, -4.0, 30.0, 0.0});
  const Image8x16 clean = a.observe();
  const StepRecord r = a.step(d);
  CHECK(r.clean == clean);
  CHECK(std::abs(r.clean.mean() - 0.5) <= 1e-9);
  CHECK(r.perturbed.px == (clean + d).px);
  CHECK(r.rudder == std::clamp(forward_scalar(a.rudder_net(), r.perturbed.values()), -1.0, 1.0));
  CHECK(r.post == integrate_dynamics(r.pre, r.rudder, SimConfig{}));
}

TEST_CASE("controller corrects toward the centerline; downtrack increases") {
  Simulator sim = controller_sim();
  sim.initialize({3.0, 0.0, 0.0, 0.0});
  double prev_dt = 0.0;
  for (int k = 0; k < 8; ++k) {
    sim.step(Image8x16{});
    CHECK(sim.state().downtrack > prev_dt);
    prev_dt = sim.state().downtrack;
  }
  CHECK(std::abs(sim.state().d) < 1.5);
}

TEST_CASE("config validation") {
  SimConfig c;
  c.substep = 0.3;
  CHECK_THROWS_AS(c.validate(), SimError);
  c = {};
  c.speed = 0.0;
  CHECK_THROWS_AS(c.validate(), SimError);
}

}  // TEST_SUITE
