#include "imgast/verify.hpp"

#include "imgast/simplex.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace imgast {

std::string to_string(QueryStatus s) {
  switch (s) {
    case QueryStatus::Sat:
      return "SAT";
    case QueryStatus::Unsat:
      return "UNSAT";
    case QueryStatus::Timeout:
      return "TIMEOUT";
  }
  return "?";
}

NeuronPhase NeuronBounds::phase(std::size_t k) const {
  if (lower[k] >= 0.0) return NeuronPhase::Active;
  if (upper[k] <= 0.0) return NeuronPhase::Inactive;
  return NeuronPhase::Unstable;
}

std::size_t NeuronBounds::unstable_count() const {
  std::size_t n = 0;
  for (std::size_t k = 0; k < lower.size(); ++k) n += phase(k) == NeuronPhase::Unstable ? 1 : 0;
  return n;
}

namespace {

void check_query_network(const NetworkDefinition& net, std::size_t x_size) {
  if (net.layers.empty() || net.output_dim() != 1 || net.layers.back().is_relu()) {
    throw NetworkError("robustness queries need a scalar network with a linear output layer");
  }
  if (static_cast<int>(x_size) != net.input_dim()) throw NetworkError("query center does not match the network input");
}

/// Affine lower and upper envelopes of a layer's values in the disturbance.
struct Envelope {
  Eigen::MatrixXd lower_coeffs;
  Eigen::VectorXd lower_const;
  Eigen::MatrixXd upper_coeffs;
  Eigen::VectorXd upper_const;
};

}  // namespace

NeuronBounds propagate_bounds(const NetworkDefinition& net, std::span<const double> center, double delta,
                              const PhaseAssignment& assignment, const NeuronBounds* parent) {
  if (static_cast<int>(assignment.size()) != net.relu_count()) throw std::invalid_argument("assignment size mismatch");
  const Eigen::Map<const Eigen::VectorXd> x(center.data(), static_cast<Eigen::Index>(center.size()));
  NeuronBounds out;
  out.lower.reserve(assignment.size());
  out.upper.reserve(assignment.size());

  Envelope h;
  std::size_t relu_index = 0;
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    const auto& layer = net.layers[li];
    Envelope z;
    if (li == 0) {
      z.lower_coeffs = layer.weights;
      z.lower_const = layer.weights * x + layer.bias;
      z.upper_coeffs = z.lower_coeffs;
      z.upper_const = z.lower_const;
    } else {
      const Eigen::MatrixXd wp = layer.weights.cwiseMax(0.0);
      const Eigen::MatrixXd wn = layer.weights.cwiseMin(0.0);
      z.lower_coeffs = wp * h.lower_coeffs + wn * h.upper_coeffs;
      z.lower_const = wp * h.lower_const + wn * h.upper_const + layer.bias;
      z.upper_coeffs = wp * h.upper_coeffs + wn * h.lower_coeffs;
      z.upper_const = wp * h.upper_const + wn * h.lower_const + layer.bias;
    }
    Eigen::VectorXd lo = z.lower_const - delta * z.lower_coeffs.cwiseAbs().rowwise().sum();
    Eigen::VectorXd hi = z.upper_const + delta * z.upper_coeffs.cwiseAbs().rowwise().sum();

    if (!layer.is_relu()) {
      if (li + 1 != net.layers.size()) throw NetworkError("identity hidden layers are not supported by the verifier");
      out.output_lower = lo(0);
      out.output_upper = hi(0);
      if (parent) {
        out.output_lower = std::max(out.output_lower, parent->output_lower);
        out.output_upper = std::min(out.output_upper, parent->output_upper);
      }
      out.output_upper_coeffs.assign(z.upper_coeffs.data(), z.upper_coeffs.data() + z.upper_coeffs.size());
      break;
    }

    h = z;
    for (Eigen::Index u = 0; u < z.lower_const.size(); ++u, ++relu_index) {
      double l = lo(u);
      double up = hi(u);
      if (parent) {
        l = std::max(l, parent->lower[relu_index]);
        up = std::min(up, parent->upper[relu_index]);
        if (l > up) {
          out.infeasible = true;
          up = l;
        }
      }
      const Phase fixed = assignment[relu_index];
      if (fixed == Phase::Active) {
        if (up < 0.0) out.infeasible = true;
        l = std::max(l, 0.0);
      } else if (fixed == Phase::Inactive) {
        if (l > 0.0) out.infeasible = true;
        up = std::min(up, 0.0);
      }
      out.lower.push_back(l);
      out.upper.push_back(up);
      const bool active = fixed == Phase::Active || (fixed == Phase::Unfixed && l >= 0.0);
      const bool inactive = fixed == Phase::Inactive || (fixed == Phase::Unfixed && up <= 0.0);
      if (active) continue;  // identity
      if (inactive) {
        h.lower_coeffs.row(u).setZero();
        h.upper_coeffs.row(u).setZero();
        h.lower_const(u) = 0.0;
        h.upper_const(u) = 0.0;
        continue;
      }
      // Triangle relaxation: upper chord through (l, 0) and (u, u); lower
      // slope 0 or 1, whichever leaves the smaller area.
      const double slope = up / (up - l);
      h.upper_coeffs.row(u) *= slope;
      h.upper_const(u) = slope * (h.upper_const(u) - l);
      if (up <= -l) {
        h.lower_coeffs.row(u).setZero();
        h.lower_const(u) = 0.0;
      }
    }
  }
  return out;
}

std::size_t branch_neuron(const BranchNode& node, const NeuronBounds& bounds) {
  std::size_t best = bounds.lower.size();
  double best_score = -1.0;
  for (std::size_t k = 0; k < bounds.lower.size(); ++k) {
    if (node.assignment[k] != Phase::Unfixed || bounds.phase(k) != NeuronPhase::Unstable) continue;
    const double score = std::abs(bounds.lower[k] * bounds.upper[k]);
    if (score > best_score) {
      best_score = score;
      best = k;
    }
  }
  if (best == bounds.lower.size()) throw std::logic_error("branch called without an unstable neuron");
  return best;
}

BranchChildren branch(const BranchNode& node, const NeuronBounds& bounds) {
  const std::size_t k = branch_neuron(node, bounds);
  auto shared = std::make_shared<const NeuronBounds>(bounds);
  BranchChildren c{node, node};
  c.active.parent_bounds = c.inactive.parent_bounds = shared;
  c.active.assignment[k] = Phase::Active;
  c.inactive.assignment[k] = Phase::Inactive;
  c.active.depth = c.inactive.depth = node.depth + 1;
  return c;
}

namespace {

/// Exact affine form of each pre-activation under a complete phase pattern.
struct AffineNetwork {
  std::vector<Eigen::VectorXd> relu_coeffs;  // per ReLU, in the disturbance
  std::vector<double> relu_const;
  Eigen::VectorXd output_coeffs;
  double output_const = 0.0;
};

AffineNetwork affine_under_phases(const NetworkDefinition& net, std::span<const double> center,
                                  const PhaseAssignment& phases) {
  const Eigen::Map<const Eigen::VectorXd> x(center.data(), static_cast<Eigen::Index>(center.size()));
  AffineNetwork a;
  Eigen::MatrixXd coeffs;
  Eigen::VectorXd consts;
  std::size_t relu_index = 0;
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    const auto& layer = net.layers[li];
    Eigen::MatrixXd zc = li == 0 ? layer.weights : Eigen::MatrixXd(layer.weights * coeffs);
    Eigen::VectorXd zk = li == 0 ? Eigen::VectorXd(layer.weights * x + layer.bias)
                                 : Eigen::VectorXd(layer.weights * consts + layer.bias);
    if (!layer.is_relu()) {
      a.output_coeffs = zc.row(0).transpose();
      a.output_const = zk(0);
      break;
    }
    for (Eigen::Index u = 0; u < zk.size(); ++u, ++relu_index) {
      a.relu_coeffs.push_back(zc.row(u).transpose());
      a.relu_const.push_back(zk(u));
      if (phases[relu_index] != Phase::Active) {
        zc.row(u).setZero();
        zk(u) = 0.0;
      }
    }
    coeffs = std::move(zc);
    consts = std::move(zk);
  }
  return a;
}

LeafResult leaf_decide_masked(const RobustnessQuery& q, const PhaseAssignment& phases,
                              const std::vector<char>& constrained, VerifyStats* stats) {
  for (Phase p : phases) {
    if (p == Phase::Unfixed) throw std::invalid_argument("leaf_decide needs every phase fixed");
  }
  const auto n = static_cast<std::size_t>(q.net.input_dim());
  const double f0 = forward_scalar(q.net, q.x);
  const AffineNetwork a = affine_under_phases(q.net, q.x, phases);

  LinearProgram lp;
  lp.objective.assign(a.output_coeffs.data(), a.output_coeffs.data() + n);
  lp.lower.assign(n, -q.delta);
  lp.upper.assign(n, q.delta);
  for (std::size_t k = 0; k < phases.size(); ++k) {
    if (!constrained[k]) continue;
    LinearRow row;
    row.coeffs.assign(a.relu_coeffs[k].data(), a.relu_coeffs[k].data() + n);
    // active: c.d + k >= 0 ; inactive: c.d + k <= 0
    row.sense = phases[k] == Phase::Active ? RowSense::GreaterEqual : RowSense::LessEqual;
    row.rhs = -a.relu_const[k];
    lp.rows.push_back(std::move(row));
  }
  if (q.options.mean_preserving) lp.rows.push_back({std::vector<double>(n, 1.0), RowSense::Equal, 0.0});

  LeafResult r;
  if (lp.rows.empty()) {
    // Box only: the optimum is the sign vertex.
    r.witness.resize(n);
    double opt = a.output_const - f0;
    for (std::size_t i = 0; i < n; ++i) {
      const double c = lp.objective[i];
      r.witness[i] = c >= 0.0 ? q.delta : -q.delta;
      opt += std::abs(c) * q.delta;
    }
    r.optimum = opt;
  } else {
    if (stats) ++stats->lps;
    const LpResult res = solve_lp(lp, SimplexOptions{q.options.lp_tol, 1e-9, 1e-11, 20000});
    if (res.status == LpStatus::NumericalFailure) {
      r.outcome = LeafOutcome::NumericalFailure;
      return r;
    }
    if (res.status == LpStatus::Infeasible) {
      r.outcome = LeafOutcome::NoSolution;
      r.optimum = -std::numeric_limits<double>::infinity();
      return r;
    }
    r.optimum = res.objective + a.output_const - f0;
    r.witness = res.x;
  }
  r.outcome = r.optimum >= q.epsilon - q.options.lp_tol ? LeafOutcome::Sat : LeafOutcome::NoSolution;
  return r;
}

double achieved_change(const NetworkDefinition& net, std::span<const double> x, std::span<const double> d) {
  std::vector<double> xp(x.begin(), x.end());
  for (std::size_t i = 0; i < xp.size(); ++i) xp[i] += d[i];
  return forward_scalar(net, xp) - forward_scalar(net, x);
}


/// Gradient of the scalar output with respect to the input at a point.
std::vector<double> input_gradient(const NetworkDefinition& net, std::span<const double> x) {
  std::vector<Eigen::VectorXd> masks;
  Eigen::VectorXd h = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
  for (const auto& layer : net.layers) {
    Eigen::VectorXd z = layer.weights * h + layer.bias;
    if (layer.is_relu()) {
      masks.emplace_back((z.array() > 0.0).cast<double>());
      h = z.cwiseMax(0.0);
    } else {
      masks.emplace_back(Eigen::VectorXd::Ones(z.size()));
      h = z;
    }
  }
  Eigen::RowVectorXd g = Eigen::RowVectorXd::Ones(1);
  for (std::size_t li = net.layers.size(); li-- > 0;) {
    g = (g.array() * masks[li].transpose().array()).matrix() * net.layers[li].weights;
  }
  return {g.data(), g.data() + g.size()};
}

/// Repeated sign-gradient steps to box corners; a cheap local maximizer.
std::vector<double> corner_ascent(const NetworkDefinition& net, std::span<const double> x, double delta,
                                  std::vector<double> start, int iterations) {
  std::vector<double> xp(x.size());
  auto value = [&](const std::vector<double>& d) {
    for (std::size_t i = 0; i < xp.size(); ++i) xp[i] = x[i] + d[i];
    return forward_scalar(net, xp);
  };
  double best = value(start);
  for (int it = 0; it < iterations; ++it) {
    for (std::size_t i = 0; i < xp.size(); ++i) xp[i] = x[i] + start[i];
    const auto g = input_gradient(net, xp);
    std::vector<double> next(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) next[i] = g[i] > 0.0 ? delta : (g[i] < 0.0 ? -delta : start[i]);
    if (next == start) break;
    const double v = value(next);
    if (!(v > best)) break;
    best = v;
    start = std::move(next);
  }
  return start;
}

/// Triangle-relaxation LP over the node's region: inputs plus one variable
/// per unstable ReLU. Fixed phases become half-space rows.
struct NodeRelaxation {
  LinearProgram lp;
  double objective_const = 0.0;
  std::size_t inputs = 0;
};

NodeRelaxation node_relaxation(const RobustnessQuery& q, const PhaseAssignment& assignment, const NeuronBounds& b) {
  const auto n = static_cast<Eigen::Index>(q.x.size());
  const Eigen::Index vars = n + static_cast<Eigen::Index>(b.unstable_count());
  NodeRelaxation r;
  r.inputs = static_cast<std::size_t>(n);
  r.lp.lower.assign(static_cast<std::size_t>(n), -q.delta);
  r.lp.upper.assign(static_cast<std::size_t>(n), q.delta);

  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(n, vars);
  h.leftCols(n).setIdentity();
  Eigen::VectorXd hc = Eigen::Map<const Eigen::VectorXd>(q.x.data(), n);
  Eigen::Index next_var = n;
  std::size_t k = 0;
  auto add_row = [&](const Eigen::RowVectorXd& coeffs, RowSense sense, double rhs) {
    r.lp.rows.push_back({std::vector<double>(coeffs.data(), coeffs.data() + coeffs.size()), sense, rhs});
  };
  for (const auto& layer : q.net.layers) {
    Eigen::MatrixXd z = layer.weights * h;
    Eigen::VectorXd zc = layer.weights * hc + layer.bias;
    if (!layer.is_relu()) {
      r.lp.objective.assign(z.data(), z.data() + z.size());  // single row, column-major == row
      r.objective_const = zc(0);
      break;
    }
    for (Eigen::Index u = 0; u < z.rows(); ++u, ++k) {
      const Phase fixed = assignment[k];
      const NeuronPhase ph = b.phase(k);
      if (fixed == Phase::Active || (fixed == Phase::Unfixed && ph == NeuronPhase::Active)) {
        if (fixed == Phase::Active) add_row(z.row(u), RowSense::GreaterEqual, -zc(u));
        continue;
      }
      if (fixed == Phase::Inactive || ph == NeuronPhase::Inactive) {
        if (fixed == Phase::Inactive) add_row(z.row(u), RowSense::LessEqual, -zc(u));
        z.row(u).setZero();
        zc(u) = 0.0;
        continue;
      }
      const double l = b.lower[k];
      const double up = b.upper[k];
      const double slope = up / (up - l);
      Eigen::RowVectorXd e = Eigen::RowVectorXd::Zero(vars);
      e(next_var) = 1.0;
      add_row(e - z.row(u), RowSense::GreaterEqual, zc(u));                        // h >= z
      add_row(e - slope * z.row(u), RowSense::LessEqual, slope * (zc(u) - l));     // h <= chord
      r.lp.lower.push_back(0.0);
      r.lp.upper.push_back(up);
      z.row(u) = e;
      zc(u) = 0.0;
      ++next_var;
    }
    h = std::move(z);
    hc = std::move(zc);
  }
  if (q.options.mean_preserving) {
    Eigen::RowVectorXd e = Eigen::RowVectorXd::Zero(vars);
    e.head(n).setOnes();
    add_row(e, RowSense::Equal, 0.0);
  }
  return r;
}

}  // namespace

LeafResult leaf_decide(const RobustnessQuery& q, const PhaseAssignment& phases) {
  check_query_network(q.net, q.x.size());
  return leaf_decide_masked(q, phases, std::vector<char>(phases.size(), 1), nullptr);
}

bool check_counterexample(const NetworkDefinition& net, std::span<const double> x, std::span<const double> d,
                          double delta, double epsilon) {
  if (d.size() != x.size()) return false;
  for (double v : d) {
    if (!(std::abs(v) <= delta + 1e-9)) return false;
  }
  return achieved_change(net, x, d) >= epsilon - 1e-6;
}

RobustnessQuery maximize_form(const RobustnessQuery& q) {
  if (q.direction == Direction::Maximize) return q;
  RobustnessQuery m = q;
  m.net = negate_output(q.net);
  m.direction = Direction::Maximize;
  return m;
}

QueryResult solve(const RobustnessQuery& query) {
  const auto t0 = std::chrono::steady_clock::now();
  check_query_network(query.net, query.x.size());
  if (!(query.delta >= 0.0) || !std::isfinite(query.delta) || !std::isfinite(query.epsilon)) {
    throw std::invalid_argument("query needs a finite delta >= 0 and finite epsilon");
  }
  const RobustnessQuery q = maximize_form(query);
  const auto relus = static_cast<std::size_t>(q.net.relu_count());
  const double f0 = forward_scalar(q.net, q.x);
  QueryResult result;
  auto finish = [&](QueryStatus status) {
    result.status = status;
    if (status != QueryStatus::Sat) result.witness.clear();
    result.stats.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return result;
  };
  // A witness counts only if it clears epsilon by the LP tolerance on a
  // concrete forward pass.
  auto accept = [&](std::vector<double> d) {
    for (double& v : d) v = std::clamp(v, -q.delta, q.delta);
    if (q.options.mean_preserving) {
      double s = 0.0;
      for (double v : d) s += v;
      if (std::abs(s) > 1e-9) return false;
    }
    const double got = achieved_change(q.net, q.x, d);
    if (got < q.epsilon - q.options.lp_tol) return false;
    if (!check_counterexample(q.net, q.x, d, q.delta, q.epsilon)) return false;
    result.witness = std::move(d);
    result.achieved = got;
    return true;
  };

  if (!q.options.mean_preserving && relus > 0) {
    std::vector<double> start(q.x.size());
    const auto g = input_gradient(q.net, q.x);
    for (std::size_t i = 0; i < g.size(); ++i) start[i] = g[i] >= 0.0 ? q.delta : -q.delta;
    if (accept(corner_ascent(q.net, q.x, q.delta, std::move(start), 8))) return finish(QueryStatus::Sat);
  }

  std::vector<BranchNode> stack;
  stack.push_back({PhaseAssignment(relus, Phase::Unfixed), nullptr, 0});
  while (!stack.empty()) {
    BranchNode node = std::move(stack.back());
    stack.pop_back();
    if (++result.stats.nodes > q.options.node_budget) return finish(QueryStatus::Timeout);

    const NeuronBounds b = propagate_bounds(q.net, q.x, q.delta, node.assignment, node.parent_bounds.get());
    if (b.infeasible) continue;
    if (b.output_upper - f0 < q.epsilon - q.options.lp_tol) continue;

    if (!q.options.mean_preserving) {
      std::vector<double> vertex(b.output_upper_coeffs.size());
      for (std::size_t i = 0; i < vertex.size(); ++i) vertex[i] = b.output_upper_coeffs[i] >= 0.0 ? q.delta : -q.delta;
      if (accept(std::move(vertex))) return finish(QueryStatus::Sat);
    }

    // Fixed neurons are clipped to their phase, so only unfixed ones can be unstable.
    if (b.unstable_count() == 0) {
      PhaseAssignment full = node.assignment;
      std::vector<char> constrained(relus, 0);
      for (std::size_t k = 0; k < relus; ++k) {
        if (full[k] != Phase::Unfixed) {
          constrained[k] = 1;
        } else {
          full[k] = b.phase(k) == NeuronPhase::Active ? Phase::Active : Phase::Inactive;
        }
      }
      const LeafResult leaf = leaf_decide_masked(q, full, constrained, &result.stats);
      if (leaf.outcome == LeafOutcome::NumericalFailure) {
        ++result.stats.escalations;
      } else if (leaf.outcome == LeafOutcome::Sat) {
        if (accept(leaf.witness)) return finish(QueryStatus::Sat);
        ++result.stats.escalations;
      }
      continue;
    }
    if (q.options.node_lp) {
      // The relaxation only prunes or proposes witnesses; a failed solve just means branching.
      const NodeRelaxation relax = node_relaxation(q, node.assignment, b);
      ++result.stats.lps;
      const LpResult lp = solve_lp(relax.lp, SimplexOptions{q.options.lp_tol, 1e-9, 1e-11, 20000});
      if (lp.status == LpStatus::Infeasible) continue;
      if (lp.status == LpStatus::Optimal) {
        if (lp.objective + relax.objective_const - f0 < q.epsilon - q.options.lp_tol) continue;
        if (accept(std::vector<double>(lp.x.begin(), lp.x.begin() + static_cast<std::ptrdiff_t>(relax.inputs)))) {
          return finish(QueryStatus::Sat);
        }
      }
    }
    BranchChildren kids = branch(node, b);
    stack.push_back(std::move(kids.inactive));
    stack.push_back(std::move(kids.active));
  }
  return finish(result.stats.escalations > 0 ? QueryStatus::Timeout : QueryStatus::Unsat);
}

std::vector<double> heuristic_disturbance(const NetworkDefinition& net, std::span<const double> x, double delta) {
  check_query_network(net, x.size());
  const NeuronBounds b =
      propagate_bounds(net, x, delta, PhaseAssignment(static_cast<std::size_t>(net.relu_count()), Phase::Unfixed));
  std::vector<double> start(x.size());
  for (std::size_t i = 0; i < start.size(); ++i) start[i] = b.output_upper_coeffs[i] >= 0.0 ? delta : -delta;
  auto d = corner_ascent(net, x, delta, std::move(start), 8);
  if (achieved_change(net, x, d) < 0.0) std::fill(d.begin(), d.end(), 0.0);
  return d;
}

double lipschitz_cap(const NetworkDefinition& net, double delta) {
  double cap = delta;
  for (const auto& l : net.layers) cap *= l.weights.cwiseAbs().rowwise().sum().maxCoeff();
  return cap;
}

}  // namespace imgast
