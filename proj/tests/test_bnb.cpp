#include <doctest.h>

#include <limits>

#include "pivotkit/opt/bnb.hpp"
#include "pivotkit/rng.hpp"

using namespace pk::opt;
constexpr double kInf = std::numeric_limits<double>::infinity();

TEST_CASE("branch_and_bound knapsack") {
  // max 2a + 3b s.t. a + b <= 1, a,b binary  ->  b = 1, objective 3.
  // Exhaustive check over the 4 assignments gives the same answer.
  MixedIntegerLP milp;
  milp.lp.cost = Eigen::VectorXd(2);
  milp.lp.cost << -2, -3;  // minimize negative
  milp.lp.ineq_A = Eigen::MatrixXd(1, 2);
  milp.lp.ineq_A << -1, -1;
  milp.lp.ineq_b = Eigen::VectorXd::Constant(1, -1.0);
  milp.binary_indices = {0, 1};
  const auto r = branch_and_bound(milp);
  REQUIRE(r.status == SolveStatus::optimal);
  CHECK(r.objective == doctest::Approx(-3.0));
  CHECK(r.solution(0) == doctest::Approx(0.0));
  CHECK(r.solution(1) == doctest::Approx(1.0));

  double best = kInf;
  for (int a = 0; a <= 1; ++a)
    for (int b = 0; b <= 1; ++b)
      if (a + b <= 1) best = std::min(best, -2.0 * a - 3.0 * b);
  CHECK(r.objective == doctest::Approx(best));
}

TEST_CASE("branch_and_bound integral relaxation needs no branching") {
  // min -z s.t. z <= 1, binary: relaxation already at z = 1.
  MixedIntegerLP milp;
  milp.lp.cost = Eigen::VectorXd::Constant(1, -1.0);
  milp.binary_indices = {0};
  const auto r = branch_and_bound(milp);
  REQUIRE(r.status == SolveStatus::optimal);
  CHECK(r.solution(0) == doctest::Approx(1.0));
  CHECK(r.iterations == 1);  // root only
}

TEST_CASE("branch_and_bound contradictory big-M activation infeasible") {
  // force f >= 1 while f <= M z and z fixed 0 by z <= 0.
  MixedIntegerLP milp;
  milp.lp.cost = Eigen::VectorXd::Zero(2);  // vars: f, z
  milp.lp.ineq_A = Eigen::MatrixXd(3, 2);
  milp.lp.ineq_b = Eigen::VectorXd(3);
  milp.lp.ineq_A << 1, 0,   // f >= 1
      -1, 10,               // M z - f >= 0
      0, -1;                // z <= 0
  milp.lp.ineq_b << 1, 0, 0;
  milp.binary_indices = {1};
  milp.couplings = {{1, 1, 10.0}};
  const auto r = branch_and_bound(milp);
  CHECK(r.status == SolveStatus::infeasible);
}

TEST_CASE("branch_and_bound incumbent never beats root relaxation bound") {
  pk::Rng rng(31);
  for (int trial = 0; trial < 25; ++trial) {
    const int nb = 4;
    const int nc = 2;
    const int n = nb + nc;
    MixedIntegerLP milp;
    milp.lp.cost.resize(n);
    for (int j = 0; j < n; ++j) milp.lp.cost(j) = rng.uniform(-1, 1);
    milp.lp.ineq_A.resize(3, n);
    milp.lp.ineq_b.resize(3);
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < n; ++j) milp.lp.ineq_A(i, j) = rng.uniform(-1, 1);
      milp.lp.ineq_b(i) = rng.uniform(-2, -0.5);
    }
    milp.lp.lower = Eigen::VectorXd::Constant(n, 0.0);
    milp.lp.upper = Eigen::VectorXd::Constant(n, 1.0);
    milp.binary_indices = {0, 1, 2, 3};

    const auto root = solve_lp(milp.lp);
    const auto r = branch_and_bound(milp);
    if (r.status == SolveStatus::optimal && root.status == SolveStatus::optimal) {
      CHECK(r.objective >= root.objective - 1e-9);
      // Binaries integral within 1e-6.
      for (int b : milp.binary_indices)
        CHECK(std::abs(r.solution(b) - std::round(r.solution(b))) <= 1e-6);
      // Exhaustive 2^4 oracle.
      double best = kInf;
      for (int mask = 0; mask < 16; ++mask) {
        LinearProgram fixed = milp.lp;
        for (int k = 0; k < 4; ++k) {
          fixed.lower(k) = (mask >> k) & 1;
          fixed.upper(k) = (mask >> k) & 1;
        }
        const auto fr = solve_lp(fixed);
        if (fr.status == SolveStatus::optimal) best = std::min(best, fr.objective);
      }
      CHECK(r.objective == doctest::Approx(best).epsilon(1e-6));
    }
  }
}

TEST_CASE("branch_and_bound node budget returns budget_exhausted") {
  MixedIntegerLP milp;
  const int nb = 8;
  milp.lp.cost = -Eigen::VectorXd::Ones(nb);
  milp.lp.ineq_A = Eigen::MatrixXd(1, nb);
  milp.lp.ineq_A.setConstant(-1.0);
  milp.lp.ineq_b = Eigen::VectorXd::Constant(1, -3.5);  // sum <= 3.5
  milp.binary_indices.resize(nb);
  for (int i = 0; i < nb; ++i) milp.binary_indices[i] = i;
  BnbOptions opts;
  opts.node_budget = 2;
  const auto r = branch_and_bound(milp, opts);
  CHECK(r.status == SolveStatus::budget_exhausted);
}

TEST_CASE("branch_and_bound incumbent hint seeds pruning") {
  MixedIntegerLP milp;
  milp.lp.cost = Eigen::VectorXd(2);
  milp.lp.cost << -2, -3;
  milp.lp.ineq_A = Eigen::MatrixXd(1, 2);
  milp.lp.ineq_A << -1, -1;
  milp.lp.ineq_b = Eigen::VectorXd::Constant(1, -1.0);
  milp.binary_indices = {0, 1};
  milp.incumbent_hint = {0.0, 1.0};
  const auto r = branch_and_bound(milp);
  REQUIRE(r.status == SolveStatus::optimal);
  CHECK(r.objective == doctest::Approx(-3.0));
}
