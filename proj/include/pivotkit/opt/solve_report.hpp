#pragma once

#include <Eigen/Core>
#include <string>

namespace pk::opt {

enum class SolveStatus : int { optimal = 0, feasible = 1, infeasible = 2, budget_exhausted = 3 };

const char* to_string(SolveStatus s);

/// Common result record for every solver in this module. Solvers that prove
/// optimality also return the multipliers they ended with so an independent
/// checker can re-verify the KKT residuals without re-running the solver.
struct SolveReport {
  SolveStatus status = SolveStatus::infeasible;
  Eigen::VectorXd solution;
  double objective = 0.0;
  double max_violation = 0.0;
  long iterations = 0;
  double wall_time_s = 0.0;
  std::string diagnostic;

  // Multipliers (conventions per solver; see each solver header).
  Eigen::VectorXd duals_eq;
  Eigen::VectorXd duals_ineq;

  bool ok() const { return status == SolveStatus::optimal || status == SolveStatus::feasible; }
};

}  // namespace pk::opt
