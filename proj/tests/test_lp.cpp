#include <doctest.h>

#include <limits>

#include "pivotkit/errors.hpp"
#include "pivotkit/opt/lp.hpp"
#include "pivotkit/rng.hpp"

using namespace pk::opt;
constexpr double kInf = std::numeric_limits<double>::infinity();

TEST_CASE("solve_lp single active bound") {
  LinearProgram lp;
  lp.cost = Eigen::VectorXd::Ones(1);
  lp.lower = Eigen::VectorXd::Constant(1, 1.0);
  lp.upper = Eigen::VectorXd::Constant(1, kInf);
  const auto r = solve_lp(lp);
  REQUIRE(r.status == SolveStatus::optimal);
  CHECK(r.solution(0) == doctest::Approx(1.0));
}

TEST_CASE("solve_lp simplex vertex") {
  LinearProgram lp;
  lp.cost = Eigen::VectorXd(2);
  lp.cost << -1, -1;
  lp.ineq_A = Eigen::MatrixXd(1, 2);
  lp.ineq_A << -1, -1;  // y + z <= 1
  lp.ineq_b = Eigen::VectorXd::Constant(1, -1.0);
  lp.lower = Eigen::VectorXd::Zero(2);
  lp.upper = Eigen::VectorXd::Constant(2, kInf);
  const auto r = solve_lp(lp);
  REQUIRE(r.status == SolveStatus::optimal);
  CHECK(r.objective == doctest::Approx(-1.0));
  // Vertex enumeration oracle for this simplex: (0,0), (1,0), (0,1); best is -1.
  CHECK(r.solution(0) + r.solution(1) == doctest::Approx(1.0));
}

TEST_CASE("solve_lp contradictory bounds infeasible") {
  LinearProgram lp;
  lp.cost = Eigen::VectorXd::Ones(1);
  lp.ineq_A = Eigen::MatrixXd(2, 1);
  lp.ineq_A << -1, 1;  // x <= 0 and x >= 1
  lp.ineq_b = Eigen::VectorXd(2);
  lp.ineq_b << 0, 1;
  const auto r = solve_lp(lp);
  CHECK(r.status == SolveStatus::infeasible);
  CHECK(r.max_violation > 1e-6);
}

TEST_CASE("solve_lp dimension mismatch throws") {
  LinearProgram lp;
  lp.cost = Eigen::VectorXd::Ones(2);
  lp.eq_A = Eigen::MatrixXd::Ones(1, 3);
  lp.eq_b = Eigen::VectorXd::Ones(1);
  CHECK_THROWS_AS(solve_lp(lp), pk::ConfigError);
}

TEST_CASE("solve_lp random problems verified by KKT checker") {
  pk::Rng rng(42);
  int solved = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const int n = 3 + static_cast<int>(rng.uniform_index(4));
    const int m = 2 + static_cast<int>(rng.uniform_index(4));
    LinearProgram lp;
    lp.cost.resize(n);
    for (int j = 0; j < n; ++j) lp.cost(j) = rng.uniform(-1, 1);
    lp.ineq_A.resize(m, n);
    lp.ineq_b.resize(m);
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) lp.ineq_A(i, j) = rng.uniform(-1, 1);
      lp.ineq_b(i) = rng.uniform(-1, 0.2);
    }
    lp.lower = Eigen::VectorXd::Constant(n, -2.0);
    lp.upper = Eigen::VectorXd::Constant(n, 2.0);
    const auto r = solve_lp(lp);
    if (r.status == SolveStatus::optimal) {
      ++solved;
      CHECK(lp_kkt_residual(lp, r) <= 1e-6);
    }
  }
  CHECK(solved > 30);  // most of these random boxes are feasible
}

TEST_CASE("solve_lp equality handling") {
  // min x + y s.t. x + y = 2, x,y in [0, 3]
  LinearProgram lp;
  lp.cost = Eigen::VectorXd::Ones(2);
  lp.eq_A = Eigen::MatrixXd::Ones(1, 2);
  lp.eq_b = Eigen::VectorXd::Constant(1, 2.0);
  lp.lower = Eigen::VectorXd::Zero(2);
  lp.upper = Eigen::VectorXd::Constant(2, 3.0);
  const auto r = solve_lp(lp);
  REQUIRE(r.status == SolveStatus::optimal);
  CHECK(r.objective == doctest::Approx(2.0));
  CHECK(lp_kkt_residual(lp, r) <= 1e-6);
}

TEST_CASE("solve_lp free variables") {
  // min -x s.t. x + y <= 4, x - y <= 2, y free but bounded via rows.
  LinearProgram lp;
  lp.cost = Eigen::VectorXd(2);
  lp.cost << -1, 0;
  lp.ineq_A = Eigen::MatrixXd(3, 2);
  lp.ineq_A << -1, -1, -1, 1, 0, 1;  // x+y<=4, x-y<=2, y >= -1
  lp.ineq_b = Eigen::VectorXd(3);
  lp.ineq_b << -4, -2, -1;
  const auto r = solve_lp(lp);
  REQUIRE(r.status == SolveStatus::optimal);
  CHECK(r.objective == doctest::Approx(-3.0));  // x=3 at y=1
}
