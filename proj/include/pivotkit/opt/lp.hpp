#pragma once

#include <Eigen/Core>

#include "pivotkit/opt/solve_report.hpp"

namespace pk::opt {

/// Dense linear program
///   min  cost . x
///   s.t. eq_A x = eq_b,  ineq_A x >= ineq_b,  lower <= x <= upper.
/// Empty matrices mean "no constraints of that kind"; +-inf bounds allowed.
struct LinearProgram {
  Eigen::VectorXd cost;
  Eigen::MatrixXd eq_A;
  Eigen::VectorXd eq_b;
  Eigen::MatrixXd ineq_A;
  Eigen::VectorXd ineq_b;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  int num_vars() const { return static_cast<int>(cost.size()); }

  /// Throws ConfigError on inconsistent dimensions.
  void validate() const;
};

/// Primal simplex on the standard-form conversion of `lp`. Dantzig pricing
/// with a switch to Bland's rule after a run of degenerate pivots.
/// status = optimal: KKT residuals <= tol (duals returned in the report;
///   duals_eq for rows of eq_A, duals_ineq for rows of ineq_A, >= 0).
/// status = infeasible: diagnostic carries the phase-1 objective, which
///   exceeds tol by construction.
SolveReport solve_lp(const LinearProgram& lp, double tol = 1e-6);

/// Independent optimality check: recomputes primal feasibility, dual cone
/// membership, stationarity and complementary slackness from the report's
/// solution and multipliers. Returns the max residual over all conditions.
double lp_kkt_residual(const LinearProgram& lp, const SolveReport& report);

}  // namespace pk::opt
