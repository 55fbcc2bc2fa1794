#pragma once

#include <Eigen/Core>
#include <vector>

#include "pivotkit/opt/solve_report.hpp"

namespace pk::opt {

/// Dense convex quadratic program
///   min  1/2 x' H x + cost . x
///   s.t. eq_A x = eq_b,  ineq_A x >= ineq_b,  lower <= x <= upper.
/// H must be symmetric positive semidefinite (eigenvalues >= -1e-9);
/// indefinite Hessians are rejected with a diagnostic.
struct QuadraticProgram {
  Eigen::MatrixXd hessian;
  Eigen::VectorXd cost;
  Eigen::MatrixXd eq_A;
  Eigen::VectorXd eq_b;
  Eigen::MatrixXd ineq_A;
  Eigen::VectorXd ineq_b;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  int num_vars() const { return static_cast<int>(cost.size()); }
  void validate() const;
};

/// Hint from a previous related solve: inequality rows (indices into the
/// combined [ineq; lower; upper] list used below) tried first when scanning
/// for violated constraints, which keeps the active-set path short across
/// consecutive simulator substeps.
struct QpWarmStart {
  std::vector<int> active;
};

/// Dual active-set method (Goldfarb-Idnani scheme): starts at the
/// unconstrained minimizer and adds violated constraints, dropping blocking
/// ones along partial steps. Terminates finitely for PD Hessians; PSD
/// Hessians get a tiny ridge (reported in the diagnostic).
///
/// Multiplier convention in the report: duals_eq per eq row (free sign),
/// duals_ineq per combined row [ineq rows..., lower bounds..., upper bounds...]
/// all >= 0, with bound rows present only for finite bounds.
SolveReport solve_qp(const QuadraticProgram& qp, double tol = 1e-6,
                     QpWarmStart* warm = nullptr);

/// Independent KKT residual check (stationarity, feasibility, dual cone,
/// complementary slackness) from the report's solution and multipliers.
double qp_kkt_residual(const QuadraticProgram& qp, const SolveReport& report);

}  // namespace pk::opt
