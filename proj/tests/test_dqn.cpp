#include "imgast/dqn.hpp"

#include "support/chain_mdp.hpp"

#include <doctest.h>

#include <boost/math/distributions/chi_squared.hpp>

#include <cmath>
#include <random>

using namespace imgast;

namespace {

NetworkDefinition tiny_target() {
  Eigen::MatrixXd w(2, 2);
  w << 1.0, 0.0, 0.0, 2.0;
  Eigen::VectorXd b(2);
  b << 0.5, -1.0;
  NetworkDefinition net;
  net.input_rows = 1;
  net.input_cols = 2;
  net.layers.push_back(make_dense(w, b, Activation::Identity));
  return net;
}

double chi_square(const std::vector<long>& counts, const std::vector<double>& p, long draws) {
  double x2 = 0.0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const double e = p[i] * static_cast<double>(draws);
    x2 += (static_cast<double>(counts[i]) - e) * (static_cast<double>(counts[i]) - e) / e;
  }
  return x2;
}

QNetConfig chain_config() {
  QNetConfig c;
  c.hidden = {16, 16};
  c.learning_rate = 0.01;
  c.batch_size = 16;
  c.warmup = 64;
  c.target_sync = 50;
  c.epsilon_decay_steps = 1500;
  c.epsilon_end = 0.1;
  c.seed = 3;
  return c;
}

}  // namespace

TEST_SUITE("dqn") {

TEST_CASE("td_target") {
  const auto t = tiny_target();
  const std::vector<double> s2{1.0, 1.0};
  CHECK(td_target(0.3, s2, true, t, 0.9) == 0.3);
  CHECK(td_target(0.3, s2, false, t, 0.0) == 0.3);
  // Q_target(s') = (1.5, 1.0) by hand
  CHECK(td_target(0.3, s2, false, t, 0.9) == doctest::Approx(0.3 + 0.9 * 1.5).epsilon(1e-15));
  const std::vector<double> s3{-2.0, 1.0};
  CHECK(td_target(-1.0, s3, false, t, 1.0) == doctest::Approx(-1.0 + 1.0).epsilon(1e-15));
}

TEST_CASE("train_step: zero error leaves weights, single transition converges") {
  NetworkDefinition q = make_qnet(3, {4}, 2, 11);
  const NetworkDefinition target = q;
  const std::vector<double> s{0.2, -0.4, 0.9};
  Transition exact{s, 1, forward(q, s)(1), s, true};
  SgdMomentum opt(q, 0.05, 0.0);
  TdBatch batch{{&exact}, {1.0}};
  CHECK(train_step(q, target, batch, 1.0, opt) == 0.0);
  CHECK(same_weights(q, target));

  Transition one{s, 0, 2.5, s, true};
  TdBatch b1{{&one}, {1.0}};
  double first = 0.0, last = 0.0;
  for (int k = 0; k < 400; ++k) {
    last = train_step(q, target, b1, 1.0, opt);
    if (k == 0) first = last;
  }
  CHECK(first > 1.0);
  CHECK(last < 1e-10);
  CHECK(std::abs(forward(q, s)(0) - 2.5) < 1e-5);
}

TEST_CASE("td_loss gradient matches central finite differences") {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> n(0.0, 1.0);
  // nonzero biases keep every pre-activation off the ReLU kink (a dead layer
  // with zero biases puts the next layer exactly at 0)
  NetworkDefinition online = make_qnet(3, {5, 4}, 2, 5);
  for (auto& l : online.layers) {
    for (auto& b : l.bias) b = 0.3 * n(rng);
  }
  const NetworkDefinition target = make_qnet(3, {5, 4}, 2, 6);
  std::vector<Transition> items;
  for (int k = 0; k < 6; ++k) {
    items.push_back({{n(rng), n(rng), n(rng)}, k % 2, n(rng), {n(rng), n(rng), n(rng)}, k == 5});
  }
  TdBatch batch;
  for (const auto& t : items) batch.items.push_back(&t);
  batch.weights = {1.0, 0.5, 0.25, 0.8, 0.9, 0.3};
  const TdLoss l = td_loss(online, target, batch, 0.95);

  const double h = 1e-5;
  int compared = 0;
  double worst = 0.0;
  for (std::size_t li = 0; li < online.layers.size(); ++li) {
    const auto& g = l.gradient.layers[li];
    for (int r = 0; r < g.weights.rows(); ++r) {
      for (int c = 0; c <= g.weights.cols(); ++c) {
        NetworkDefinition plus = online, minus = online;
        const bool bias = c == g.weights.cols();
        (bias ? plus.layers[li].bias(r) : plus.layers[li].weights(r, c)) += h;
        (bias ? minus.layers[li].bias(r) : minus.layers[li].weights(r, c)) -= h;
        const double fd = (td_loss(plus, target, batch, 0.95).loss - td_loss(minus, target, batch, 0.95).loss) / (2 * h);
        const double an = bias ? g.bias(r) : g.weights(r, c);
        const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-6});
        worst = std::max(worst, rel);
        ++compared;
      }
    }
  }
  MESSAGE("worst relative gradient error over ", compared, " parameters: ", worst);
  CHECK(worst <= 1e-4);
}

TEST_CASE("replay: sampling follows priority^a") {
  const int n = 20;
  ReplayBuffer buf(32, 0.6, 1e-3);
  for (int i = 0; i < n; ++i) buf.add({{double(i)}, 0, 0.0, {0.0}, true});
  for (int i = 0; i < n; ++i) CHECK(buf.priority(static_cast<std::size_t>(i)) == doctest::Approx(1.0));

  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  std::vector<double> p(n);
  double z = 0.0;
  for (int i = 0; i < n; ++i) {
    const double td = u(rng);
    buf.update_priority(static_cast<std::size_t>(i), td);
    p[static_cast<std::size_t>(i)] = std::pow(std::abs(td) + 1e-3, 0.6);
    z += p[static_cast<std::size_t>(i)];
  }
  for (auto& v : p) v /= z;
  for (int i = 0; i < n; ++i) CHECK(buf.probability(static_cast<std::size_t>(i)) == doctest::Approx(p[static_cast<std::size_t>(i)]).epsilon(1e-12));

  const long draws = 100000;
  std::vector<long> counts(n, 0);
  for (long k = 0; k < draws; ++k) ++counts[buf.draw(rng)];
  const double crit = boost::math::quantile(boost::math::chi_squared(n - 1), 0.999);
  const double x2 = chi_square(counts, p, draws);
  MESSAGE("prioritized chi-square ", x2, " (critical ", crit, ")");
  CHECK(x2 < crit);

  ReplayBuffer flat(20, 0.6, 1e-3);
  for (int i = 0; i < n; ++i) flat.add({{double(i)}, 0, 0.0, {0.0}, true});
  std::vector<long> fc(n, 0);
  for (long k = 0; k < draws; ++k) ++fc[flat.draw(rng)];
  const std::vector<double> uniform(n, 1.0 / n);
  for (int i = 0; i < n; ++i) CHECK(flat.probability(static_cast<std::size_t>(i)) == doctest::Approx(1.0 / n).epsilon(1e-14));
  CHECK(chi_square(fc, uniform, draws) < crit);

  const auto b = buf.sample(64, 0.4, rng);
  CHECK(*std::max_element(b.weight.begin(), b.weight.end()) == 1.0);
  for (double w : b.weight) CHECK(w > 0.0);
}

TEST_CASE("replay: ring overwrite and max-priority insertion") {
  ReplayBuffer buf(3, 1.0, 0.01);
  for (int i = 0; i < 3; ++i) buf.add({{double(i)}, 0, 0.0, {0.0}, true});
  buf.update_priority(1, 4.0);
  buf.add({{9.0}, 0, 0.0, {0.0}, true});
  CHECK(buf.size() == 3);
  CHECK(buf.at(0).state[0] == 9.0);
  CHECK(buf.priority(0) == doctest::Approx(4.01));
  CHECK_THROWS(buf.update_priority(7, 1.0));
}

TEST_CASE("target network changes only at sync boundaries") {
  QNetConfig cfg = chain_config();
  cfg.warmup = 16;
  cfg.target_sync = 7;
  testsupport::ChainMdp env;
  DqnAgent agent(5, 2, cfg);
  std::mt19937_64 rng(1);
  auto s = env.reset(rng);
  for (int k = 0; k < 200; ++k) {
    const int a = agent.act(s);
    auto st = env.step(a);
    agent.remember({s, a, st.reward, st.features, st.terminal});
    s = st.terminal ? env.reset(rng) : st.features;
    const NetworkDefinition before = agent.target();
    if (!agent.learn()) continue;
    if (agent.train_steps() % cfg.target_sync == 0) {
      CHECK(same_weights(agent.target(), agent.online()));
    } else {
      CHECK(same_weights(agent.target(), before));
    }
  }
  CHECK(agent.syncs() == agent.train_steps() / cfg.target_sync);
}

TEST_CASE("zero budget returns the initial network; seeded training is reproducible") {
  testsupport::ChainMdp env;
  const QNetConfig cfg = chain_config();
  const DqnResult none = train_dqn(env, cfg, 0);
  CHECK(same_weights(none.qnet, make_qnet(5, cfg.hidden, 2, cfg.seed)));
  CHECK(none.train_steps == 0);

  const DqnResult a = train_dqn(env, cfg, 60);
  const DqnResult b = train_dqn(env, cfg, 60);
  CHECK(same_weights(a.qnet, b.qnet));
  CHECK(a.losses == b.losses);
}

TEST_CASE("chain MDP: greedy policy matches value iteration") {
  testsupport::ChainMdp env;
  const auto optimal = testsupport::chain_optimal_actions();
  CHECK(optimal[1] == 0);
  CHECK(optimal[2] == 1);
  CHECK(optimal[3] == 1);
  const DqnResult r = train_dqn(env, chain_config(), 800);
  for (int s = 1; s <= 3; ++s) {
    const Eigen::VectorXd q = forward(r.qnet, testsupport::one_hot(s));
    MESSAGE("state ", s, " Q = (", q(0), ", ", q(1), ")");
    CHECK((q(1) > q(0) ? 1 : 0) == optimal[static_cast<std::size_t>(s)]);
  }
}

TEST_CASE("config validation") {
  QNetConfig c;
  c.gamma = 0.0;
  CHECK_THROWS(c.validate());
  c = {};
  c.epsilon_end = 0.5;
  c.epsilon_start = 0.2;
  CHECK_THROWS(c.validate());
  c = {};
  c.hidden = {};
  CHECK_THROWS(c.validate());
}

}  // TEST_SUITE
