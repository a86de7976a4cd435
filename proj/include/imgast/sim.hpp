// Closed-loop taxi simulator exposing the black-box interface used by the
// stress-testing search: initialize, step, is_terminal, is_failure.
#pragma once

#include "imgast/imaging.hpp"
#include "imgast/net.hpp"

#include <optional>
#include <stdexcept>

namespace imgast {

class SimError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct SimState {
  double d = 0.0;          // crosstrack, meters, positive to the left
  double theta_deg = 0.0;  // heading relative to the taxiway, degrees
  double downtrack = 0.0;  // meters
  double t = 0.0;          // seconds

  bool operator==(const SimState&) const = default;
};

struct SimConfig {
  double speed = 5.0;               // m/s
  double control_period = 1.0;      // s
  double substep = 0.05;            // s
  double heading_rate_gain = 24.0;  // deg/s per unit rudder
  double failure_threshold = 10.0;  // m
  double terminal_downtrack = 200.0;
  double rudder_limit = 1.0;

  /// Throws SimError unless positive and the substep divides the control period.
  void validate() const;
  int substeps() const;
};

struct StepRecord {
  SimState pre;
  Image8x16 disturbance;
  Image8x16 clean;
  Image8x16 perturbed;
  double rudder = 0.0;
  SimState post;
};

SimState integrate_dynamics(const SimState& s, double rudder, const SimConfig& cfg);
bool is_failure(const SimState& s, const SimConfig& cfg);
bool is_terminal(const SimState& s, const SimConfig& cfg);
/// Distance to the failure boundary, max(0, threshold - |d|).
double dist(const SimState& s, const SimConfig& cfg);

/// One closed-loop instance around a scalar-output (rudder) network. Not
/// thread-safe; use one per worker.
class Simulator {
public:
  Simulator(NetworkDefinition rudder_net, SceneConfig scene, SimConfig cfg);

  void initialize(const SimState& s0);
  const SimState& state() const;

  /// Mean-biased clean observation at the current state (cached).
  const Image8x16& observe();

  /// render -> downsample -> mean_bias -> add disturbance -> rudder net ->
  /// saturate -> integrate one control period.
  StepRecord step(const Image8x16& disturbance);

  bool is_terminal() const { return imgast::is_terminal(state(), cfg_); }
  bool is_failure() const { return imgast::is_failure(state(), cfg_); }

  const NetworkDefinition& rudder_net() const { return net_; }
  const SceneConfig& scene() const { return scene_; }
  const SimConfig& config() const { return cfg_; }

private:
  NetworkDefinition net_;
  SceneConfig scene_;
  SimConfig cfg_;
  std::optional<SimState> state_;
  std::optional<Image8x16> observation_;
};

/// Clean observation at a state without a simulator handle.
Image8x16 observe_state(const SimState& s, const SceneConfig& scene);

}  // namespace imgast
