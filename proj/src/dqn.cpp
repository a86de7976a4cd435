#include "imgast/dqn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace imgast {

void QNetConfig::validate() const {
  if (hidden.empty() || std::any_of(hidden.begin(), hidden.end(), [](int h) { return h < 1; }))
    throw std::invalid_argument("dqn: hidden layers must be nonempty and positive");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("dqn: learning_rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("dqn: momentum must be in [0, 1)");
  if (target_sync < 1) throw std::invalid_argument("dqn: target_sync must be >= 1");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("dqn: gamma must be in (0, 1]");
  if (!(epsilon_start >= epsilon_end && epsilon_end >= 0.0 && epsilon_start <= 1.0))
    throw std::invalid_argument("dqn: need 1 >= epsilon_start >= epsilon_end >= 0");
  if (epsilon_decay_steps < 1) throw std::invalid_argument("dqn: epsilon_decay_steps must be >= 1");
  if (batch_size < 1 || replay_capacity < 1) throw std::invalid_argument("dqn: batch and replay sizes must be >= 1");
  if (!(priority_exponent >= 0.0) || !(importance_exponent >= 0.0) || !(priority_floor > 0.0))
    throw std::invalid_argument("dqn: priority exponents must be >= 0 and the floor > 0");
  if (warmup < 0) throw std::invalid_argument("dqn: warmup must be >= 0");
}

NetworkDefinition make_qnet(int feature_dim, const std::vector<int>& hidden, int n_actions, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto he = [&rng](int rows, int cols) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / cols));
    Eigen::MatrixXd m(rows, cols);
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) m(r, c) = dist(rng);
    }
    return m;
  };
  NetworkDefinition net;
  net.input_rows = 1;
  net.input_cols = feature_dim;
  int in = feature_dim;
  for (int h : hidden) {
    net.layers.push_back(make_dense(he(h, in), Eigen::VectorXd::Zero(h), Activation::Relu));
    in = h;
  }
  net.layers.push_back(make_dense(he(n_actions, in) * 0.1, Eigen::VectorXd::Zero(n_actions), Activation::Identity));
  net.validate();
  return net;
}

std::vector<double> state_features(const SimState& s, const SceneConfig& scene, const SimConfig& sim) {
  (void)sim;
  return {s.d / 10.0, s.theta_deg / 30.0, dash_phase(s.downtrack, scene) / scene.dash_period(), s.downtrack / 200.0};
}

ReplayBuffer::ReplayBuffer(std::size_t capacity, double exponent, double floor)
    : capacity_(capacity), exponent_(exponent), floor_(floor) {
  if (capacity == 0) throw std::invalid_argument("replay: capacity must be >= 1");
  leaves_ = 1;
  while (leaves_ < capacity) leaves_ *= 2;
  tree_.assign(2 * leaves_, 0.0);
  data_.resize(capacity);
}

void ReplayBuffer::set_leaf(std::size_t i, double value) {
  std::size_t k = leaves_ + i;
  tree_[k] = value;
  for (k /= 2; k >= 1; k /= 2) tree_[k] = tree_[2 * k] + tree_[2 * k + 1];
}

void ReplayBuffer::add(Transition t) {
  data_[next_] = std::move(t);
  set_leaf(next_, std::pow(max_priority_, exponent_));
  next_ = (next_ + 1) % capacity_;
  size_ = std::min(size_ + 1, capacity_);
}

void ReplayBuffer::update_priority(std::size_t i, double td_error) {
  if (i >= size_) throw std::out_of_range("replay: index out of range");
  const double p = std::abs(td_error) + floor_;
  if (!std::isfinite(p)) throw std::invalid_argument("replay: non-finite priority");
  max_priority_ = std::max(max_priority_, p);
  set_leaf(i, std::pow(p, exponent_));
}

double ReplayBuffer::priority(std::size_t i) const { return std::pow(tree_[leaves_ + i], 1.0 / exponent_); }

double ReplayBuffer::probability(std::size_t i) const { return tree_[leaves_ + i] / tree_[1]; }

std::size_t ReplayBuffer::draw(std::mt19937_64& rng) const {
  if (size_ == 0) throw std::logic_error("replay: empty buffer");
  std::uniform_real_distribution<double> u(0.0, tree_[1]);
  double x = u(rng);
  std::size_t k = 1;
  while (k < leaves_) {
    if (x < tree_[2 * k] || tree_[2 * k + 1] == 0.0) {
      k = 2 * k;
    } else {
      x -= tree_[2 * k];
      k = 2 * k + 1;
    }
  }
  return std::min(k - leaves_, size_ - 1);
}

ReplayBuffer::Batch ReplayBuffer::sample(std::size_t n, double importance_exponent, std::mt19937_64& rng) const {
  Batch b;
  double wmax = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t i = draw(rng);
    const double w = std::pow(static_cast<double>(size_) * probability(i), -importance_exponent);
    b.index.push_back(i);
    b.weight.push_back(w);
    wmax = std::max(wmax, w);
  }
  for (double& w : b.weight) w /= wmax;
  return b;
}

double td_target(double reward, std::span<const double> next_state, bool terminal, const NetworkDefinition& target,
                 double gamma) {
  if (terminal) return reward;
  return reward + gamma * forward(target, next_state).maxCoeff();
}

TdLoss td_loss(const NetworkDefinition& online, const NetworkDefinition& target, const TdBatch& batch, double gamma) {
  TdLoss out;
  out.gradient = NetworkGradient::zeros_like(online);
  const double inv = 1.0 / static_cast<double>(batch.items.size());
  for (std::size_t k = 0; k < batch.items.size(); ++k) {
    const Transition& t = *batch.items[k];
    const double w = batch.weights.empty() ? 1.0 : batch.weights[k];
    const double y = td_target(t.reward, t.next_state, t.terminal, target, gamma);
    const ForwardCache cache = forward_cached(online, t.state);
    const double err = cache.output(t.action) - y;
    out.td_errors.push_back(err);
    out.loss += inv * w * 0.5 * err * err;
    Eigen::VectorXd g = Eigen::VectorXd::Zero(cache.output.size());
    g(t.action) = inv * w * err;
    accumulate_gradient(online, cache, g, out.gradient);
  }
  return out;
}

double train_step(NetworkDefinition& online, const NetworkDefinition& target, const TdBatch& batch, double gamma,
                  SgdMomentum& opt) {
  const TdLoss l = td_loss(online, target, batch, gamma);
  if (!std::isfinite(l.loss)) throw TrainingError("dqn: non-finite loss", 0);
  opt.step(online, l.gradient);
  return l.loss;
}

DqnAgent::DqnAgent(int feature_dim, int n_actions, const QNetConfig& cfg)
    : cfg_((cfg.validate(), cfg)),
      n_actions_(n_actions),
      online_(make_qnet(feature_dim, cfg.hidden, n_actions, cfg.seed)),
      target_(online_),
      opt_(online_, cfg.learning_rate, cfg.momentum),
      replay_(cfg.replay_capacity, cfg.priority_exponent, cfg.priority_floor),
      rng_(cfg.seed ^ 0x5851f42d4c957f2dULL) {}

int DqnAgent::greedy(std::span<const double> features) const {
  const Eigen::VectorXd q = forward(online_, features);
  int best = 0;
  for (int a = 1; a < q.size(); ++a) {
    if (q(a) > q(best)) best = a;
  }
  return best;
}

double DqnAgent::epsilon() const {
  const double t = std::min(1.0, static_cast<double>(env_steps_) / static_cast<double>(cfg_.epsilon_decay_steps));
  return cfg_.epsilon_start + t * (cfg_.epsilon_end - cfg_.epsilon_start);
}

int DqnAgent::act(std::span<const double> features) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double eps = epsilon();
  ++env_steps_;
  if (u(rng_) < eps) {
    std::uniform_int_distribution<int> pick(0, n_actions_ - 1);
    return pick(rng_);
  }
  return greedy(features);
}

void DqnAgent::remember(Transition t) { replay_.add(std::move(t)); }

std::optional<double> DqnAgent::learn() {
  const auto need = static_cast<std::size_t>(std::max(cfg_.warmup, cfg_.batch_size));
  if (replay_.size() < need) return std::nullopt;
  const auto b = replay_.sample(static_cast<std::size_t>(cfg_.batch_size), cfg_.importance_exponent, rng_);
  TdBatch batch;
  for (std::size_t i : b.index) batch.items.push_back(&replay_.at(i));
  batch.weights = b.weight;
  const TdLoss l = td_loss(online_, target_, batch, cfg_.gamma);
  if (!std::isfinite(l.loss)) throw TrainingError("dqn: non-finite loss", static_cast<int>(train_steps_));
  opt_.step(online_, l.gradient);
  for (std::size_t k = 0; k < b.index.size(); ++k) replay_.update_priority(b.index[k], l.td_errors[k]);
  ++train_steps_;
  if (train_steps_ % cfg_.target_sync == 0) {
    target_ = online_;
    ++syncs_;
  }
  return l.loss;
}

DqnResult train_dqn(DqnEnvironment& env, const QNetConfig& cfg, int episodes, int max_steps) {
  if (episodes < 0) throw std::invalid_argument("dqn: episodes must be >= 0");
  DqnAgent agent(env.feature_dim(), env.n_actions(), cfg);
  std::mt19937_64 env_rng(cfg.seed * 0x9e3779b97f4a7c15ULL + 1);
  DqnResult res;
  for (int ep = 0; ep < episodes; ++ep) {
    std::vector<double> s = env.reset(env_rng);
    double ret = 0.0;
    for (int k = 0; k < max_steps; ++k) {
      const int a = agent.act(s);
      EnvStep st = env.step(a);
      ret += st.reward;
      agent.remember({s, a, st.reward, st.features, st.terminal});
      if (auto loss = agent.learn()) res.losses.push_back(*loss);
      s = std::move(st.features);
      if (st.terminal) break;
    }
    res.episode_returns.push_back(ret);
  }
  res.qnet = agent.online();
  res.train_steps = agent.train_steps();
  res.syncs = agent.syncs();
  return res;
}

AstEnvironment::AstEnvironment(Simulator sim, std::shared_ptr<Realizer> realizer, AstConfig ast, double reward_scale,
                               StartBox starts)
    : sim_(std::move(sim)),
      realizer_(std::move(realizer)),
      ast_(ast),
      reward_scale_(reward_scale),
      starts_(starts),
      actions_(action_set(ast)) {
  if (!(reward_scale > 0.0)) throw std::invalid_argument("dqn env: reward_scale must be > 0");
}

std::vector<double> AstEnvironment::reset(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> ud(starts_.d_min, starts_.d_max);
  std::uniform_real_distribution<double> ut(starts_.theta_min, starts_.theta_max);
  SimState s;
  s.d = ud(rng);
  s.theta_deg = ut(rng);
  sim_.initialize(s);
  steps_ = 0;
  return state_features(s, sim_.scene(), sim_.config());
}

EnvStep AstEnvironment::step(int action) {
  const double delta = actions_.at(static_cast<std::size_t>(action));
  const SimState pre = sim_.state();
  const Image8x16 x = sim_.observe();
  const AstAction a = realizer_->realize(pre, x, delta);
  const StepRecord rec = sim_.step(a.disturbance);
  ++steps_;
  const bool at_horizon = steps_ >= ast_.horizon;
  EnvStep out;
  out.features = state_features(rec.post, sim_.scene(), sim_.config());
  out.reward = reward_scale_ * reward(rec.post, delta, ast_, sim_.config(), at_horizon);
  out.terminal = at_horizon || sim_.is_terminal();
  return out;
}

Policy greedy_policy(const NetworkDefinition& qnet, const AstConfig& ast, const SceneConfig& scene,
                     const SimConfig& sim) {
  const auto actions = action_set(ast);
  return [qnet, actions, scene, sim](int, const SimState& s, const Image8x16&) {
    const Eigen::VectorXd q = forward(qnet, state_features(s, scene, sim));
    int best = 0;
    for (int a = 1; a < q.size(); ++a) {
      if (q(a) > q(best)) best = a;
    }
    return actions[static_cast<std::size_t>(best)];
  };
}

}  // namespace imgast
