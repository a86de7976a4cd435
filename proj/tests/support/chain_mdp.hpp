// Five-state corridor with terminals at both ends, and its value-iteration
// solution.
#pragma once

#include "imgast/dqn.hpp"

#include <array>
#include <cmath>
#include <vector>

namespace testsupport {

struct ChainOutcome {
  int next = 0;
  double reward = 0.0;
  bool terminal = false;
};

// States 0..4; 0 and 4 are terminal. Action 0 moves left, 1 moves right.
// Each move costs 0.2 unless it enters a terminal, which pays 0.7 (left) or
// 1.0 (right).
inline ChainOutcome chain_step(int s, int a) {
  const int n = s + (a == 0 ? -1 : 1);
  if (n == 0) return {n, 0.7, true};
  if (n == 4) return {n, 1.0, true};
  return {n, -0.2, false};
}

inline std::vector<double> one_hot(int s) {
  std::vector<double> f(5, 0.0);
  f[static_cast<std::size_t>(s)] = 1.0;
  return f;
}

class ChainMdp : public imgast::DqnEnvironment {
public:
  int feature_dim() const override { return 5; }
  int n_actions() const override { return 2; }
  std::vector<double> reset(std::mt19937_64& rng) override {
    std::uniform_int_distribution<int> pick(1, 3);
    s_ = pick(rng);
    return one_hot(s_);
  }
  imgast::EnvStep step(int action) override {
    const ChainOutcome o = chain_step(s_, action);
    s_ = o.next;
    return {one_hot(o.next), o.reward, o.terminal};
  }

private:
  int s_ = 2;
};

// Optimal action per state (index 1..3), undiscounted.
inline std::array<int, 5> chain_optimal_actions() {
  std::array<double, 5> v{};
  for (int sweep = 0; sweep < 100; ++sweep) {
    for (int s = 1; s <= 3; ++s) {
      double best = -1e9;
      for (int a = 0; a < 2; ++a) {
        const ChainOutcome o = chain_step(s, a);
        best = std::max(best, o.reward + (o.terminal ? 0.0 : v[static_cast<std::size_t>(o.next)]));
      }
      v[static_cast<std::size_t>(s)] = best;
    }
  }
  std::array<int, 5> pi{-1, 0, 0, 0, -1};
  for (int s = 1; s <= 3; ++s) {
    double best = -1e9;
    for (int a = 0; a < 2; ++a) {
      const ChainOutcome o = chain_step(s, a);
      const double q = o.reward + (o.terminal ? 0.0 : v[static_cast<std::size_t>(o.next)]);
      if (q > best + 1e-12) {
        best = q;
        pi[static_cast<std::size_t>(s)] = a;
      }
    }
  }
  return pi;
}

}  // namespace testsupport
