#pragma once

#include <Eigen/Core>
#include <functional>

#include "pivotkit/opt/solve_report.hpp"

namespace pk::opt {

/// Smooth nonlinear program
///   min  cost(x)
///   s.t. eq(x) = 0,  ineq(x) >= 0,  lower <= x <= upper.
/// Gradient/Jacobian callables are optional; central finite differences with
/// h = 1e-6 * (1 + |x_j|) are used where they are absent. All callables must
/// be defined on the whole box-bounded domain.
struct NonlinearProgram {
  std::function<double(const Eigen::VectorXd&)> cost;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> eq;    // may be null
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> ineq;  // may be null
  Eigen::VectorXd x0;
  Eigen::VectorXd lower;  // empty = unbounded
  Eigen::VectorXd upper;

  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> cost_grad;  // may be null
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> eq_jac;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> ineq_jac;
};

struct NlpOptions {
  double tol = 1e-5;
  int max_outer = 25;
  int max_inner = 300;       // BFGS iterations per outer solve
  double rho0 = 10.0;        // initial penalty
  double rho_growth = 10.0;  // escalation when violation stalls
  double rho_max = 1e9;
};

/// Augmented-Lagrangian outer loop (PHR multiplier updates for inequalities,
/// bounds folded in as inequalities) with a BFGS inner minimizer and
/// backtracking Armijo line search.
///   optimal: first-order stationarity of the AL and constraint violation <= tol
///   budget_exhausted: best iterate so far returned.
/// Throws NumericalError if cost/constraints evaluate non-finite (the
/// offending point is included in the message).
SolveReport solve_nlp(const NonlinearProgram& nlp, const NlpOptions& opts = {});

/// Independent first-order check at the reported solution using the report's
/// multipliers: max of constraint violation and projected-gradient residual.
double nlp_kkt_residual(const NonlinearProgram& nlp, const SolveReport& report);

}  // namespace pk::opt
