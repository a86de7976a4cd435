#include "imgast/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace imgast {

void SimConfig::validate() const {
  if (!(speed > 0 && control_period > 0 && substep > 0 && failure_threshold > 0 && terminal_downtrack > 0 &&
        rudder_limit > 0 && std::isfinite(heading_rate_gain))) {
    throw SimError("simulator configuration values must be positive");
  }
  const double n = control_period / substep;
  if (std::abs(n - std::round(n)) > 1e-9) throw SimError("substep must divide the control period");
}

int SimConfig::substeps() const { return static_cast<int>(std::lround(control_period / substep)); }

SimState integrate_dynamics(const SimState& s, double rudder, const SimConfig& cfg) {
  const double deg = std::numbers::pi / 180.0;
  const int n = cfg.substeps();
  const double dt = cfg.control_period / n;
  // Positive rudder turns toward negative crosstrack, so the control law
  // r = k_d d + k_theta theta is corrective.
  const double rate = -cfg.heading_rate_gain * rudder;
  SimState out = s;
  for (int k = 0; k < n; ++k) {
    // Heading is linear over a substep, so the arc is integrated exactly:
    // the chord follows the mid-substep heading, shortened by sinc(dtheta / 2).
    const double half = 0.5 * rate * dt * deg;
    const double mid = out.theta_deg * deg + half;
    const double shrink = half == 0.0 ? 1.0 : std::sin(half) / half;
    out.d += cfg.speed * dt * std::sin(mid) * shrink;
    out.downtrack += cfg.speed * dt * std::cos(mid) * shrink;
    out.theta_deg += rate * dt;
  }
  out.t = s.t + cfg.control_period;
  return out;
}

bool is_failure(const SimState& s, const SimConfig& cfg) { return std::abs(s.d) > cfg.failure_threshold; }

bool is_terminal(const SimState& s, const SimConfig& cfg) {
  return s.downtrack > cfg.terminal_downtrack || is_failure(s, cfg);
}

double dist(const SimState& s, const SimConfig& cfg) { return std::max(0.0, cfg.failure_threshold - std::abs(s.d)); }

Simulator::Simulator(NetworkDefinition rudder_net, SceneConfig scene, SimConfig cfg)
    : net_(std::move(rudder_net)), scene_(std::move(scene)), cfg_(cfg) {
  net_.validate();
  if (net_.output_dim() != 1 || net_.input_dim() != Image8x16::kSize) {
    throw SimError("simulator needs a scalar-output network over 8x16 images");
  }
  scene_.validate();
  cfg_.validate();
}

void Simulator::initialize(const SimState& s0) {
  if (!std::isfinite(s0.d) || !std::isfinite(s0.theta_deg) || !std::isfinite(s0.downtrack) || !std::isfinite(s0.t)) {
    throw SimError("initial state must be finite");
  }
  state_ = s0;
  observation_.reset();
}

const SimState& Simulator::state() const {
  if (!state_) throw SimError("simulator not initialized");
  return *state_;
}

const Image8x16& Simulator::observe() {
  if (!observation_) observation_ = observe_state(state(), scene_);
  return *observation_;
}

StepRecord Simulator::step(const Image8x16& disturbance) {
  if (!std::isfinite(disturbance.max_abs())) throw SimError("disturbance must be finite");
  StepRecord rec;
  rec.pre = state();
  rec.clean = observe();
  rec.disturbance = disturbance;
  rec.disturbance.mean_biased = false;
  rec.perturbed = rec.clean + rec.disturbance;
  const double raw = forward_scalar(net_, rec.perturbed.values());
  rec.rudder = std::clamp(raw, -cfg_.rudder_limit, cfg_.rudder_limit);
  rec.post = integrate_dynamics(rec.pre, rec.rudder, cfg_);
  state_ = rec.post;
  observation_.reset();
  return rec;
}

Image8x16 observe_state(const SimState& s, const SceneConfig& scene) { return preprocess(render(s, scene)); }

}  // namespace imgast
