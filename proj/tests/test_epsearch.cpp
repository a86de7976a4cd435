#include "imgast/epsearch.hpp"
#include "support/random_nets.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace imgast;

namespace {

EpsOracle threshold_oracle(double threshold, int* calls = nullptr) {
  return [threshold, calls](double eps) {
    if (calls) ++*calls;
    QueryResult r;
    r.status = eps <= threshold ? QueryStatus::Sat : QueryStatus::Unsat;
    if (r.status == QueryStatus::Sat) {
      r.witness = {threshold};
      r.achieved = threshold;
    }
    return r;
  };
}

NetworkDefinition linear(const std::vector<double>& w) {
  NetworkDefinition net;
  net.input_rows = 1;
  net.input_cols = static_cast<int>(w.size());
  Eigen::MatrixXd W(1, static_cast<Eigen::Index>(w.size()));
  for (std::size_t i = 0; i < w.size(); ++i) W(0, static_cast<Eigen::Index>(i)) = w[i];
  net.layers.push_back(make_dense(W, Eigen::VectorXd::Zero(1), Activation::Identity));
  return net;
}

// Rounds a plain sequential bisection with N+1 equal cells needs.
int cell_rounds(double upper, double tol, int n) {
  int rounds = 0;
  for (double w = upper; w > tol; w /= (n + 1)) ++rounds;
  return rounds;
}

void check_bracket_history(const DisturbanceResult& r) {
  double lo = 0.0;
  double hi = std::numeric_limits<double>::infinity();
  for (const auto& round : r.rounds) {
    CHECK(round.lower >= lo);
    CHECK(round.upper <= hi);
    CHECK(round.lower <= round.upper);
    lo = round.lower;
    hi = round.upper;
  }
}

}  // namespace

TEST_SUITE("epsearch") {

TEST_CASE("scripted threshold oracle") {
  EpsSearchConfig cfg;
  cfg.upper_bound = 1.0;
  const auto r = bisect_epsilon(threshold_oracle(0.123), 1.0, 1, cfg);
  CHECK(r.eps_lower >= 0.120);
  CHECK(r.eps_lower <= 0.123);
  CHECK(r.eps_upper - r.eps_lower <= 0.003);
  CHECK(std::abs(static_cast<int>(r.rounds.size()) - cell_rounds(1.0, 0.003, 10)) <= 1);
  check_bracket_history(r);
  // every round issues N queries
  CHECK(r.queries.size() == 10 * r.rounds.size());
}

TEST_CASE("parallel and sequential rounds give the same bracket") {
  for (double threshold : {0.0004, 0.05, 0.123, 0.5, 0.99}) {
    EpsSearchConfig seq;
    EpsSearchConfig par;
    par.threads = 4;
    int calls_seq = 0;
    int calls_par = 0;
    const auto a = bisect_epsilon(threshold_oracle(threshold, &calls_seq), 1.0, 1, seq);
    const auto b = bisect_epsilon(threshold_oracle(threshold, &calls_par), 1.0, 1, par);
    CHECK(a.eps_lower == b.eps_lower);
    CHECK(a.eps_upper == b.eps_upper);
    CHECK(a.rounds.size() == b.rounds.size());
    CHECK(calls_seq <= calls_par);
  }
}

TEST_CASE("zero radius needs no rounds") {
  const auto net = linear({1.0, -2.0});
  const auto r = max_disturbance(net, std::vector<double>{0.5, 0.5}, 0.0, {});
  CHECK(r.eps_lower == 0.0);
  CHECK(r.rounds.size() <= 1);
  CHECK(r.witness == std::vector<double>{0.0, 0.0});
}

TEST_CASE("linear nets reach the analytic optimum") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int n = 0; n < 5; ++n) {
    std::vector<double> w(8);
    double l1 = 0;
    for (double& v : w) {
      v = u(rng);
      l1 += std::abs(v);
    }
    const double best = 0.035 * l1;
    EpsSearchConfig cfg;
    cfg.upper_bound = 1.0;
    const auto r = max_disturbance(linear(w), std::vector<double>(8, 0.1), 0.035, cfg);
    CHECK(r.eps_lower <= best + 1e-9);
    CHECK(best - r.eps_lower <= 0.003);
    CHECK(check_counterexample(linear(w), std::vector<double>(8, 0.1), r.witness, 0.035, r.eps_lower));
    check_bracket_history(r);
  }
}

TEST_CASE("doubling upper bound") {
  CHECK(auto_upper_bound(threshold_oracle(0.123), 0.003) == doctest::Approx(0.192));
  const auto net = linear({0.5, -0.25});
  CHECK(auto_upper_bound(net, std::vector<double>{0, 0}, 0.0, {}) == doctest::Approx(0.003));
  // 0.1 * 0.75 = 0.075 -> first power-of-two multiple of 0.003 above it is 0.096
  CHECK(auto_upper_bound(net, std::vector<double>{0, 0}, 0.1, {}) == doctest::Approx(0.096));
}

TEST_CASE("signed search is the search on the negated network") {
  std::mt19937_64 rng(4);
  const auto net = testsupport::random_net(rng, 3, {4});
  const auto x = testsupport::random_point(rng, 3);
  const auto down = signed_disturbance(net, x, -0.2, {});
  const auto up_neg = signed_disturbance(negate_output(net), x, 0.2, {});
  CHECK(down.eps_lower == up_neg.eps_lower);
  CHECK(forward_scalar(net, x) - forward_scalar(net, [&] {
          auto p = x;
          for (std::size_t i = 0; i < p.size(); ++i) p[i] += down.witness[i];
          return p;
        }()) >= down.eps_lower - 1e-6);
  const auto zero = signed_disturbance(net, x, 0.0, {});
  CHECK(zero.eps_lower == 0.0);
  for (double v : zero.witness) CHECK(v == 0.0);
}

TEST_CASE("all-timeout round aborts with the partial bracket") {
  const EpsOracle timeouts = [](double) {
    QueryResult r;
    r.status = QueryStatus::Timeout;
    return r;
  };
  const auto r = bisect_epsilon(timeouts, 1.0, 2, {});
  CHECK(r.aborted);
  CHECK(r.had_timeout);
  CHECK(r.eps_lower == 0.0);
  CHECK(r.eps_upper == 1.0);
}

TEST_CASE("a timeout is treated as UNSAT and flagged") {
  const EpsOracle oracle = [](double eps) {
    QueryResult r;
    if (eps <= 0.3) {
      r.status = QueryStatus::Sat;
      r.witness = {0.0};
      r.achieved = eps;
    } else {
      r.status = eps < 0.6 ? QueryStatus::Timeout : QueryStatus::Unsat;
    }
    return r;
  };
  const auto r = bisect_epsilon(oracle, 1.0, 1, {});
  CHECK(r.had_timeout);
  CHECK_FALSE(r.aborted);
  CHECK(r.eps_lower <= 0.3);
  CHECK(0.3 - r.eps_lower <= 0.003);
}

TEST_CASE("analytic cap is at least the achieved change") {
  std::mt19937_64 rng(5);
  for (int n = 0; n < 10; ++n) {
    const auto net = testsupport::random_small_net(rng);
    const auto x = testsupport::random_point(rng, net.input_dim());
    const auto r = max_disturbance(net, x, 0.2, {});
    CHECK(r.achieved <= analytic_upper_bound(net, x, 0.2) + 1e-9);
    CHECK(r.eps_upper - r.eps_lower <= 0.003);
    check_bracket_history(r);
  }
}

TEST_CASE("config validation") {
  EpsSearchConfig c;
  c.parallel_queries = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.tol = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

}
