// Deep Q-learning over a discrete action set: prioritized replay, TD targets,
// a seeded agent and the stress-testing environment wrapper.
#pragma once

#include "imgast/ast.hpp"
#include "imgast/train.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <vector>

namespace imgast {

struct QNetConfig {
  std::vector<int> hidden{32, 32};
  double learning_rate = 1e-3;
  double momentum = 0.9;
  int target_sync = 200;  // train steps between target copies
  double gamma = 1.0;
  double epsilon_start = 1.0;
  double epsilon_end = 0.05;
  long long epsilon_decay_steps = 5000;  // environment steps
  int batch_size = 32;
  std::size_t replay_capacity = 50000;
  double priority_exponent = 0.6;
  double importance_exponent = 0.4;
  double priority_floor = 1e-3;
  int warmup = 200;  // transitions stored before learning starts
  std::uint64_t seed = 1;

  /// Throws std::invalid_argument on empty/non-positive sizes, gamma outside
  /// (0, 1] or an increasing epsilon schedule.
  void validate() const;
};

/// Fully connected ReLU net: features -> hidden... -> one Q value per action.
NetworkDefinition make_qnet(int feature_dim, const std::vector<int>& hidden, int n_actions, std::uint64_t seed);

/// (d / 10 m, theta / 30 deg, dash phase / period, downtrack / 200 m).
std::vector<double> state_features(const SimState& s, const SceneConfig& scene, const SimConfig& sim);

struct Transition {
  std::vector<double> state;
  int action = 0;
  double reward = 0.0;
  std::vector<double> next_state;
  bool terminal = false;
};

/// Ring buffer with sum-tree prioritized sampling, P(i) = p_i^a / sum p^a.
class ReplayBuffer {
public:
  ReplayBuffer(std::size_t capacity, double exponent, double floor);

  /// New entries get the largest priority seen so far (1 initially).
  void add(Transition t);
  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }
  const Transition& at(std::size_t i) const { return data_[i]; }

  /// p_i = |td_error| + floor.
  void update_priority(std::size_t i, double td_error);
  double priority(std::size_t i) const;
  double probability(std::size_t i) const;

  /// One draw proportional to p^a.
  std::size_t draw(std::mt19937_64& rng) const;

  struct Batch {
    std::vector<std::size_t> index;
    std::vector<double> weight;  // (N P(i))^-beta, normalised by the batch max
  };
  Batch sample(std::size_t n, double importance_exponent, std::mt19937_64& rng) const;

private:
  void set_leaf(std::size_t i, double value);

  std::size_t capacity_;
  double exponent_;
  double floor_;
  std::size_t leaves_;  // power of two >= capacity
  std::vector<double> tree_;
  std::vector<Transition> data_;
  std::size_t size_ = 0;
  std::size_t next_ = 0;
  double max_priority_ = 1.0;
};

/// r when terminal, else r + gamma * max_a Q_target(s', a).
double td_target(double reward, std::span<const double> next_state, bool terminal, const NetworkDefinition& target,
                 double gamma);

struct TdBatch {
  std::vector<const Transition*> items;
  std::vector<double> weights;
};

/// Importance-weighted loss (1/B) sum w_i * 0.5 * (Q(s_i, a_i) - y_i)^2, its
/// gradient with respect to `online`, and the per-item TD errors Q - y.
struct TdLoss {
  double loss = 0.0;
  NetworkGradient gradient;
  std::vector<double> td_errors;
};
TdLoss td_loss(const NetworkDefinition& online, const NetworkDefinition& target, const TdBatch& batch, double gamma);

/// One gradient step on the batch. Throws TrainingError on a non-finite loss.
double train_step(NetworkDefinition& online, const NetworkDefinition& target, const TdBatch& batch, double gamma,
                  SgdMomentum& opt);

struct EnvStep {
  std::vector<double> features;
  double reward = 0.0;
  bool terminal = false;
};

class DqnEnvironment {
public:
  virtual ~DqnEnvironment() = default;
  virtual int feature_dim() const = 0;
  virtual int n_actions() const = 0;
  virtual std::vector<double> reset(std::mt19937_64& rng) = 0;
  virtual EnvStep step(int action) = 0;
};

class DqnAgent {
public:
  DqnAgent(int feature_dim, int n_actions, const QNetConfig& cfg);

  int greedy(std::span<const double> features) const;
  /// Epsilon-greedy with the schedule value at the current environment step.
  int act(std::span<const double> features);
  double epsilon() const;

  void remember(Transition t);
  /// One prioritized train step once warmup is reached; nullopt before.
  std::optional<double> learn();

  const NetworkDefinition& online() const { return online_; }
  const NetworkDefinition& target() const { return target_; }
  const ReplayBuffer& replay() const { return replay_; }
  long long env_steps() const { return env_steps_; }
  long long train_steps() const { return train_steps_; }
  int syncs() const { return syncs_; }

private:
  QNetConfig cfg_;
  int n_actions_;
  NetworkDefinition online_;
  NetworkDefinition target_;
  SgdMomentum opt_;
  ReplayBuffer replay_;
  std::mt19937_64 rng_;
  long long env_steps_ = 0;
  long long train_steps_ = 0;
  int syncs_ = 0;
};

struct DqnResult {
  NetworkDefinition qnet;
  std::vector<double> episode_returns;
  std::vector<double> losses;
  long long train_steps = 0;
  int syncs = 0;
};

/// Runs `episodes` epsilon-greedy episodes (capped at max_steps each).
DqnResult train_dqn(DqnEnvironment& env, const QNetConfig& cfg, int episodes, int max_steps = 1000);

struct StartBox {
  double d_min = -5.0, d_max = 5.0;
  double theta_min = -20.0, theta_max = 20.0;
};

/// Stress-testing episodes from random starts. Rewards are multiplied by
/// reward_scale so Q values stay near unit scale; greedy choices are unchanged.
class AstEnvironment : public DqnEnvironment {
public:
  AstEnvironment(Simulator sim, std::shared_ptr<Realizer> realizer, AstConfig ast, double reward_scale,
                 StartBox starts = {});
  int feature_dim() const override { return 4; }
  int n_actions() const override { return static_cast<int>(actions_.size()); }
  std::vector<double> reset(std::mt19937_64& rng) override;
  EnvStep step(int action) override;

private:
  Simulator sim_;
  std::shared_ptr<Realizer> realizer_;
  AstConfig ast_;
  double reward_scale_;
  StartBox starts_;
  std::vector<double> actions_;
  int steps_ = 0;
};

/// Policy choosing action_set(ast)[argmax Q(features)].
Policy greedy_policy(const NetworkDefinition& qnet, const AstConfig& ast, const SceneConfig& scene,
                     const SimConfig& sim);

}  // namespace imgast
