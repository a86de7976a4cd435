// Dense bounded-variable primal simplex (two-phase, Bland's rule) for the
// small linear programs solved at branch-and-bound leaves.
#pragma once

#include <vector>

namespace imgast {

enum class RowSense { LessEqual, Equal, GreaterEqual };

struct LinearRow {
  std::vector<double> coeffs;
  RowSense sense = RowSense::LessEqual;
  double rhs = 0.0;
};

/// maximize objective . x  subject to rows and lower <= x <= upper.
/// Every variable bound must be finite.
struct LinearProgram {
  std::vector<double> objective;
  std::vector<LinearRow> rows;
  std::vector<double> lower;
  std::vector<double> upper;
};

enum class LpStatus { Optimal, Infeasible, NumericalFailure };

struct LpResult {
  LpStatus status = LpStatus::NumericalFailure;
  std::vector<double> x;
  double objective = 0.0;
  int pivots = 0;
};

struct SimplexOptions {
  double feasibility_tol = 1e-8;
  double optimality_tol = 1e-9;
  double pivot_tol = 1e-11;
  int max_pivots = 20000;
};

LpResult solve_lp(const LinearProgram& lp, const SimplexOptions& opts = {});

}  // namespace imgast
