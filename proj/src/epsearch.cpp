#include "imgast/epsearch.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <thread>

namespace imgast {

void EpsSearchConfig::validate() const {
  if (parallel_queries < 1) throw std::invalid_argument("epsearch: parallel_queries must be >= 1");
  if (!(tol > 0.0)) throw std::invalid_argument("epsearch: tol must be > 0");
  if (threads < 1) throw std::invalid_argument("epsearch: threads must be >= 1");
  if (upper_bound && !(*upper_bound >= 0.0)) throw std::invalid_argument("epsearch: upper_bound must be >= 0");
}

void parallel_for(int count, int threads, const std::function<void(int)>& body) {
  const int workers = std::max(1, std::min(threads, count));
  if (workers == 1) {
    for (int i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  {
    std::vector<std::jthread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (int i = next++; i < count; i = next++) {
          try {
            body(i);
          } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!error) error = std::current_exception();
          }
        }
      });
    }
  }
  if (error) std::rethrow_exception(error);
}

namespace {

struct Answer {
  bool known = false;
  QueryStatus status = QueryStatus::Unsat;
  bool implied = false;
  double achieved = 0.0;
  std::shared_ptr<const std::vector<double>> witness;
  VerifyStats stats;
};

Answer from_result(QueryResult r) {
  Answer a;
  a.known = true;
  a.status = r.status;
  a.achieved = r.achieved;
  a.stats = r.stats;
  if (r.status == QueryStatus::Sat) a.witness = std::make_shared<const std::vector<double>>(std::move(r.witness));
  return a;
}

// Answers one round in bisection order, filling in what earlier answers imply.
void answer_sequentially(const EpsOracle& oracle, const std::vector<double>& eps, std::vector<Answer>& answers) {
  const int n = static_cast<int>(eps.size());
  while (true) {
    std::vector<int> open;
    for (int i = 0; i < n; ++i) {
      if (!answers[static_cast<std::size_t>(i)].known) open.push_back(i);
    }
    if (open.empty()) return;
    const int i = open[open.size() / 2];
    auto& a = answers[static_cast<std::size_t>(i)];
    a = from_result(oracle(eps[static_cast<std::size_t>(i)]));
    for (int j = 0; j < n; ++j) {
      auto& b = answers[static_cast<std::size_t>(j)];
      if (b.known) continue;
      const double ej = eps[static_cast<std::size_t>(j)];
      if (a.status == QueryStatus::Sat && (j < i || ej <= a.achieved)) {
        b.known = b.implied = true;
        b.status = QueryStatus::Sat;
        b.achieved = a.achieved;
        b.witness = a.witness;
      } else if (a.status == QueryStatus::Unsat && j > i) {
        b.known = b.implied = true;
        b.status = QueryStatus::Unsat;
      }
    }
  }
}

}  // namespace

DisturbanceResult bisect_epsilon(const EpsOracle& oracle, double upper, std::size_t dim, const EpsSearchConfig& cfg) {
  cfg.validate();
  if (!(upper >= 0.0) || !std::isfinite(upper)) throw std::invalid_argument("epsearch: upper bound must be finite and >= 0");
  DisturbanceResult res;
  res.eps_upper = upper;
  res.witness.assign(dim, 0.0);
  const int n = cfg.parallel_queries;
  int round = 0;
  while (res.eps_upper - res.eps_lower > cfg.tol) {
    ++round;
    const double lo = res.eps_lower;
    const double hi = res.eps_upper;
    std::vector<double> eps(static_cast<std::size_t>(n));
    for (int i = 1; i <= n; ++i) eps[static_cast<std::size_t>(i - 1)] = lo + (hi - lo) * i / (n + 1);

    std::vector<Answer> answers(static_cast<std::size_t>(n));
    if (cfg.threads > 1) {
      parallel_for(n, cfg.threads, [&](int i) {
        answers[static_cast<std::size_t>(i)] = from_result(oracle(eps[static_cast<std::size_t>(i)]));
      });
    } else {
      answer_sequentially(oracle, eps, answers);
    }

    int best_sat = -1;
    double new_upper = hi;
    int timeouts = 0;
    for (int i = 0; i < n; ++i) {
      const auto& a = answers[static_cast<std::size_t>(i)];
      res.queries.push_back({round, eps[static_cast<std::size_t>(i)], a.status, a.implied, a.achieved, a.stats});
      res.nodes += a.stats.nodes;
      if (a.status == QueryStatus::Sat) {
        best_sat = i;
      } else {
        new_upper = std::min(new_upper, eps[static_cast<std::size_t>(i)]);
        if (a.status == QueryStatus::Timeout) ++timeouts;
      }
    }
    if (timeouts > 0) res.had_timeout = true;
    if (timeouts == n) {
      res.aborted = true;
      res.rounds.push_back({res.eps_lower, res.eps_upper});
      break;
    }
    if (best_sat >= 0) {
      const auto& a = answers[static_cast<std::size_t>(best_sat)];
      res.eps_lower = eps[static_cast<std::size_t>(best_sat)];
      res.witness = *a.witness;
      res.achieved = a.achieved;
    }
    res.eps_upper = new_upper;
    res.rounds.push_back({res.eps_lower, res.eps_upper});
  }
  return res;
}

double analytic_upper_bound(const NetworkDefinition& f, std::span<const double> x, double delta) {
  const double f0 = forward_scalar(f, x);
  const NeuronBounds b = propagate_bounds(f, x, delta, PhaseAssignment(static_cast<std::size_t>(f.relu_count()), Phase::Unfixed));
  return std::max(0.0, std::min(lipschitz_cap(f, delta), b.output_upper - f0));
}

namespace {

EpsOracle verifier_oracle(const NetworkDefinition& f, std::span<const double> x, double delta, const VerifyOptions& opts) {
  auto q = std::make_shared<RobustnessQuery>();
  q->net = f;
  q->x.assign(x.begin(), x.end());
  q->delta = delta;
  q->options = opts;
  return [q](double eps) {
    RobustnessQuery local = *q;
    local.epsilon = eps;
    return solve(local);
  };
}

}  // namespace

DisturbanceResult max_disturbance(const NetworkDefinition& f, std::span<const double> x, double delta,
                                  const EpsSearchConfig& cfg) {
  cfg.validate();
  if (!(delta >= 0.0)) throw std::invalid_argument("max_disturbance: delta must be >= 0");
  const double upper = cfg.upper_bound ? *cfg.upper_bound : analytic_upper_bound(f, x, delta);
  return bisect_epsilon(verifier_oracle(f, x, delta, cfg.verify), upper, x.size(), cfg);
}

double auto_upper_bound(const EpsOracle& oracle, double tol) {
  if (!(tol > 0.0)) throw std::invalid_argument("auto_upper_bound: tol must be > 0");
  double eps = tol;
  while (oracle(eps).status == QueryStatus::Sat) eps *= 2.0;
  return eps;
}

double auto_upper_bound(const NetworkDefinition& f, std::span<const double> x, double delta,
                        const EpsSearchConfig& cfg) {
  return auto_upper_bound(verifier_oracle(f, x, delta, cfg.verify), cfg.tol);
}

DisturbanceResult signed_disturbance(const NetworkDefinition& f, std::span<const double> x, double delta_signed,
                                     const EpsSearchConfig& cfg) {
  if (delta_signed < 0.0) return max_disturbance(negate_output(f), x, -delta_signed, cfg);
  return max_disturbance(f, x, delta_signed, cfg);
}

}  // namespace imgast
