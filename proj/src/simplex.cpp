#include "imgast/simplex.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace imgast {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

/// Tableau state over shifted variables y = x - lower, each in [0, cap].
class Tableau {
public:
  Tableau(int rows, int cols) : m_(rows), n_(cols), t_(static_cast<std::size_t>(rows) * cols, 0.0), d_(cols, 0.0) {}

  double& at(int i, int j) { return t_[static_cast<std::size_t>(i) * n_ + j]; }
  double at(int i, int j) const { return t_[static_cast<std::size_t>(i) * n_ + j]; }

  void pivot(int r, int q) {
    const double p = at(r, q);
    for (int j = 0; j < n_; ++j) at(r, j) /= p;
    at(r, q) = 1.0;
    for (int i = 0; i < m_; ++i) {
      if (i == r) continue;
      const double f = at(i, q);
      if (f == 0.0) continue;
      for (int j = 0; j < n_; ++j) at(i, j) -= f * at(r, j);
      at(i, q) = 0.0;
    }
    const double f = d_[static_cast<std::size_t>(q)];
    if (f != 0.0) {
      for (int j = 0; j < n_; ++j) d_[static_cast<std::size_t>(j)] -= f * at(r, j);
      d_[static_cast<std::size_t>(q)] = 0.0;
    }
  }

  int rows() const { return m_; }
  int cols() const { return n_; }
  std::vector<double>& reduced() { return d_; }

private:
  int m_;
  int n_;
  std::vector<double> t_;
  std::vector<double> d_;
};

struct SimplexState {
  std::vector<int> basis;       // variable in each row
  std::vector<double> basic;    // value of each row's basic variable
  std::vector<bool> is_basic;
  std::vector<bool> at_upper;   // nonbasic at its cap
  std::vector<double> cap;
};

enum class PhaseOutcome { Optimal, Failure };

constexpr int kBlandAfter = 50;

PhaseOutcome run_phase(Tableau& tab, SimplexState& st, const SimplexOptions& opts, int& pivots) {
  const int m = tab.rows();
  const int n = tab.cols();
  auto& d = tab.reduced();
  int degenerate_run = 0;
  while (true) {
    // Largest reduced cost first; after a run of degenerate pivots switch to
    // Bland's lowest-index rule, which cannot cycle.
    const bool bland = degenerate_run >= kBlandAfter;
    int q = -1;
    double best_score = 0.0;
    for (int j = 0; j < n; ++j) {
      if (st.is_basic[static_cast<std::size_t>(j)] || st.cap[static_cast<std::size_t>(j)] <= 0.0) continue;
      const double dj = d[static_cast<std::size_t>(j)];
      const double score = st.at_upper[static_cast<std::size_t>(j)] ? -dj : dj;
      if (score <= opts.optimality_tol) continue;
      if (bland) {
        q = j;
        break;
      }
      if (score > best_score) {
        best_score = score;
        q = j;
      }
    }
    if (q < 0) return PhaseOutcome::Optimal;
    if (++pivots > opts.max_pivots) return PhaseOutcome::Failure;

    const double sigma = st.at_upper[static_cast<std::size_t>(q)] ? -1.0 : 1.0;
    double best = st.cap[static_cast<std::size_t>(q)];
    int leave_row = -1;  // -1: bound flip of the entering variable
    int leave_var = q;
    bool leave_to_upper = false;
    for (int i = 0; i < m; ++i) {
      const double g = sigma * tab.at(i, q);
      const int var = st.basis[static_cast<std::size_t>(i)];
      const double ub = st.cap[static_cast<std::size_t>(var)];
      const double xb = st.basic[static_cast<std::size_t>(i)];
      double limit;
      bool to_upper;
      if (g > opts.pivot_tol) {
        limit = std::max(0.0, xb / g);
        to_upper = false;
      } else if (g < -opts.pivot_tol && std::isfinite(ub)) {
        limit = std::max(0.0, (ub - xb) / -g);
        to_upper = true;
      } else {
        continue;
      }
      const double tie = std::isfinite(best) ? 1e-12 * std::max(1.0, best) : 0.0;
      if (limit < best - tie || (limit <= best + tie && var < leave_var)) {
        best = limit;
        leave_row = i;
        leave_var = var;
        leave_to_upper = to_upper;
      }
    }
    if (!std::isfinite(best)) return PhaseOutcome::Failure;
    degenerate_run = best > 0.0 ? 0 : degenerate_run + 1;

    for (int i = 0; i < m; ++i) st.basic[static_cast<std::size_t>(i)] -= sigma * tab.at(i, q) * best;
    const double entering_value = sigma > 0 ? best : st.cap[static_cast<std::size_t>(q)] - best;
    if (leave_row < 0) {
      st.at_upper[static_cast<std::size_t>(q)] = !st.at_upper[static_cast<std::size_t>(q)];
      continue;
    }
    st.is_basic[static_cast<std::size_t>(leave_var)] = false;
    st.at_upper[static_cast<std::size_t>(leave_var)] = leave_to_upper;
    st.is_basic[static_cast<std::size_t>(q)] = true;
    st.at_upper[static_cast<std::size_t>(q)] = false;
    st.basis[static_cast<std::size_t>(leave_row)] = q;
    st.basic[static_cast<std::size_t>(leave_row)] = entering_value;
    tab.pivot(leave_row, q);
  }
}

void reset_reduced_costs(Tableau& tab, const SimplexState& st, const std::vector<double>& cost) {
  auto& d = tab.reduced();
  for (int j = 0; j < tab.cols(); ++j) {
    double v = cost[static_cast<std::size_t>(j)];
    for (int i = 0; i < tab.rows(); ++i) v -= cost[static_cast<std::size_t>(st.basis[static_cast<std::size_t>(i)])] * tab.at(i, j);
    d[static_cast<std::size_t>(j)] = st.is_basic[static_cast<std::size_t>(j)] ? 0.0 : v;
  }
}

}  // namespace

LpResult solve_lp(const LinearProgram& lp, const SimplexOptions& opts) {
  const int n = static_cast<int>(lp.objective.size());
  const int m = static_cast<int>(lp.rows.size());
  if (static_cast<int>(lp.lower.size()) != n || static_cast<int>(lp.upper.size()) != n) {
    throw std::invalid_argument("LP bounds do not match the variable count");
  }
  for (int j = 0; j < n; ++j) {
    if (!std::isfinite(lp.lower[static_cast<std::size_t>(j)]) || !std::isfinite(lp.upper[static_cast<std::size_t>(j)])) {
      throw std::invalid_argument("LP variable bounds must be finite");
    }
  }
  LpResult result;
  for (int j = 0; j < n; ++j) {
    if (lp.lower[static_cast<std::size_t>(j)] > lp.upper[static_cast<std::size_t>(j)]) {
      result.status = LpStatus::Infeasible;
      return result;
    }
  }

  int slacks = 0;
  for (const auto& r : lp.rows) {
    if (static_cast<int>(r.coeffs.size()) != n) throw std::invalid_argument("LP row width mismatch");
    if (r.sense != RowSense::Equal) ++slacks;
  }
  const int cols = n + slacks + m;
  Tableau tab(m, cols);
  SimplexState st;
  st.basis.resize(static_cast<std::size_t>(m));
  st.basic.resize(static_cast<std::size_t>(m));
  st.is_basic.assign(static_cast<std::size_t>(cols), false);
  st.at_upper.assign(static_cast<std::size_t>(cols), false);
  st.cap.assign(static_cast<std::size_t>(cols), kInf);
  for (int j = 0; j < n; ++j) {
    st.cap[static_cast<std::size_t>(j)] = lp.upper[static_cast<std::size_t>(j)] - lp.lower[static_cast<std::size_t>(j)];
  }

  int slack = n;
  for (int i = 0; i < m; ++i) {
    const auto& r = lp.rows[static_cast<std::size_t>(i)];
    double rhs = r.rhs;
    for (int j = 0; j < n; ++j) rhs -= r.coeffs[static_cast<std::size_t>(j)] * lp.lower[static_cast<std::size_t>(j)];
    const double sign = rhs < 0 ? -1.0 : 1.0;
    for (int j = 0; j < n; ++j) tab.at(i, j) = sign * r.coeffs[static_cast<std::size_t>(j)];
    if (r.sense == RowSense::LessEqual) tab.at(i, slack++) = sign;
    if (r.sense == RowSense::GreaterEqual) tab.at(i, slack++) = -sign;
    const int art = n + slacks + i;
    tab.at(i, art) = 1.0;
    st.basis[static_cast<std::size_t>(i)] = art;
    st.basic[static_cast<std::size_t>(i)] = sign * rhs;
    st.is_basic[static_cast<std::size_t>(art)] = true;
  }

  // Phase I: maximize -(sum of artificials).
  std::vector<double> cost(static_cast<std::size_t>(cols), 0.0);
  for (int i = 0; i < m; ++i) cost[static_cast<std::size_t>(n + slacks + i)] = -1.0;
  reset_reduced_costs(tab, st, cost);
  if (run_phase(tab, st, opts, result.pivots) != PhaseOutcome::Optimal) return result;
  double infeasibility = 0.0;
  for (int i = 0; i < m; ++i) {
    if (st.basis[static_cast<std::size_t>(i)] >= n + slacks) infeasibility += st.basic[static_cast<std::size_t>(i)];
  }
  if (infeasibility > opts.feasibility_tol) {
    result.status = LpStatus::Infeasible;
    return result;
  }
  // Drive zero-valued artificials out of the basis where possible, then pin them.
  for (int i = 0; i < m; ++i) {
    if (st.basis[static_cast<std::size_t>(i)] < n + slacks) continue;
    for (int j = 0; j < n + slacks; ++j) {
      if (st.is_basic[static_cast<std::size_t>(j)] || std::abs(tab.at(i, j)) <= 1e-9) continue;
      const int art = st.basis[static_cast<std::size_t>(i)];
      st.is_basic[static_cast<std::size_t>(art)] = false;
      st.at_upper[static_cast<std::size_t>(art)] = false;
      st.is_basic[static_cast<std::size_t>(j)] = true;
      st.basic[static_cast<std::size_t>(i)] = st.at_upper[static_cast<std::size_t>(j)] ? st.cap[static_cast<std::size_t>(j)] : 0.0;
      st.at_upper[static_cast<std::size_t>(j)] = false;
      st.basis[static_cast<std::size_t>(i)] = j;
      tab.pivot(i, j);
      break;
    }
  }
  for (int i = 0; i < m; ++i) st.cap[static_cast<std::size_t>(n + slacks + i)] = 0.0;

  // Phase II.
  std::fill(cost.begin(), cost.end(), 0.0);
  for (int j = 0; j < n; ++j) cost[static_cast<std::size_t>(j)] = lp.objective[static_cast<std::size_t>(j)];
  reset_reduced_costs(tab, st, cost);
  if (run_phase(tab, st, opts, result.pivots) != PhaseOutcome::Optimal) return result;

  std::vector<double> y(static_cast<std::size_t>(cols), 0.0);
  for (int j = 0; j < cols; ++j) {
    if (!st.is_basic[static_cast<std::size_t>(j)] && st.at_upper[static_cast<std::size_t>(j)]) y[static_cast<std::size_t>(j)] = st.cap[static_cast<std::size_t>(j)];
  }
  for (int i = 0; i < m; ++i) y[static_cast<std::size_t>(st.basis[static_cast<std::size_t>(i)])] = st.basic[static_cast<std::size_t>(i)];
  result.x.resize(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    const double v = std::clamp(y[static_cast<std::size_t>(j)], 0.0, st.cap[static_cast<std::size_t>(j)]);
    result.x[static_cast<std::size_t>(j)] = lp.lower[static_cast<std::size_t>(j)] + v;
  }
  // Re-check the rows on the recovered point; drift beyond tolerance is a failure.
  for (const auto& r : lp.rows) {
    double lhs = 0.0;
    double scale = std::abs(r.rhs);
    for (int j = 0; j < n; ++j) {
      lhs += r.coeffs[static_cast<std::size_t>(j)] * result.x[static_cast<std::size_t>(j)];
      scale += std::abs(r.coeffs[static_cast<std::size_t>(j)] * result.x[static_cast<std::size_t>(j)]);
    }
    const double tol = 1e-7 * std::max(1.0, scale);
    const bool ok = (r.sense == RowSense::LessEqual && lhs <= r.rhs + tol) ||
                    (r.sense == RowSense::GreaterEqual && lhs >= r.rhs - tol) ||
                    (r.sense == RowSense::Equal && std::abs(lhs - r.rhs) <= tol);
    if (!ok) return result;
  }
  result.objective = 0.0;
  for (int j = 0; j < n; ++j) result.objective += lp.objective[static_cast<std::size_t>(j)] * result.x[static_cast<std::size_t>(j)];
  result.status = LpStatus::Optimal;
  return result;
}

}  // namespace imgast
