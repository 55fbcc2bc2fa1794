#include "pivotkit/opt/lp.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <vector>

#include "pivotkit/errors.hpp"

namespace pk::opt {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kPivotTol = 1e-9;

bool finite(double v) { return std::isfinite(v); }

// Standard form: min c.y  s.t.  A y = b, y >= 0, with maps back to x.
struct StandardForm {
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
  Eigen::VectorXd c;
  // x_j = shift[j] + sign[j] * y[col_of_var[j]] (- y[neg_col_of_var[j]] if split)
  std::vector<double> shift;
  std::vector<double> sign;
  std::vector<int> col_of_var;
  std::vector<int> neg_col_of_var;  // -1 unless the variable is free (split)
  std::vector<double> row_sign;     // original row i scaled by row_sign[i] (eq rows then ineq rows)
  int n_eq = 0;
  int n_ineq = 0;
};

StandardForm to_standard_form(const LinearProgram& lp) {
  const int n = lp.num_vars();
  const int m_eq = static_cast<int>(lp.eq_b.size());
  const int m_in = static_cast<int>(lp.ineq_b.size());

  StandardForm sf;
  sf.n_eq = m_eq;
  sf.n_ineq = m_in;
  sf.shift.assign(n, 0.0);
  sf.sign.assign(n, 1.0);
  sf.col_of_var.assign(n, -1);
  sf.neg_col_of_var.assign(n, -1);

  int cols = 0;
  int bound_rows = 0;
  for (int j = 0; j < n; ++j) {
    const double lo = lp.lower.size() ? lp.lower(j) : -kInf;
    const double hi = lp.upper.size() ? lp.upper(j) : kInf;
    if (finite(lo)) {
      sf.shift[j] = lo;
      sf.sign[j] = 1.0;
      sf.col_of_var[j] = cols++;
      if (finite(hi)) ++bound_rows;  // y_j + s = hi - lo
    } else if (finite(hi)) {
      sf.shift[j] = hi;
      sf.sign[j] = -1.0;
      sf.col_of_var[j] = cols++;
    } else {
      sf.col_of_var[j] = cols++;
      sf.neg_col_of_var[j] = cols++;
    }
  }
  const int n_struct = cols;
  const int rows = m_eq + m_in + bound_rows;
  const int total_cols = n_struct + m_in + bound_rows;  // + surplus + bound slacks

  sf.A = Eigen::MatrixXd::Zero(rows, total_cols);
  sf.b = Eigen::VectorXd::Zero(rows);
  sf.c = Eigen::VectorXd::Zero(total_cols);
  sf.row_sign.assign(static_cast<std::size_t>(m_eq + m_in), 1.0);

  for (int j = 0; j < n; ++j) {
    sf.c(sf.col_of_var[j]) = lp.cost(j) * sf.sign[j];
    if (sf.neg_col_of_var[j] >= 0) sf.c(sf.neg_col_of_var[j]) = -lp.cost(j);
  }

  auto emit_row = [&](int row, const Eigen::RowVectorXd& a, double rhs) {
    double r = rhs;
    for (int j = 0; j < n; ++j) {
      r -= a(j) * sf.shift[j];
      sf.A(row, sf.col_of_var[j]) = a(j) * sf.sign[j];
      if (sf.neg_col_of_var[j] >= 0) sf.A(row, sf.neg_col_of_var[j]) = -a(j);
    }
    sf.b(row) = r;
  };

  for (int i = 0; i < m_eq; ++i) emit_row(i, lp.eq_A.row(i), lp.eq_b(i));
  for (int i = 0; i < m_in; ++i) {
    emit_row(m_eq + i, lp.ineq_A.row(i), lp.ineq_b(i));
    sf.A(m_eq + i, n_struct + i) = -1.0;  // surplus: a.x - s = b
  }
  int br = 0;
  for (int j = 0; j < n; ++j) {
    const double lo = lp.lower.size() ? lp.lower(j) : -kInf;
    const double hi = lp.upper.size() ? lp.upper(j) : kInf;
    if (finite(lo) && finite(hi)) {
      const int row = m_eq + m_in + br;
      sf.A(row, sf.col_of_var[j]) = 1.0;
      sf.A(row, n_struct + m_in + br) = 1.0;
      sf.b(row) = hi - lo;
      ++br;
    }
  }

  // Normalize RHS signs so phase-1 artificials start at b >= 0.
  for (int i = 0; i < rows; ++i) {
    if (sf.b(i) < 0.0) {
      sf.A.row(i) *= -1.0;
      sf.b(i) *= -1.0;
      if (i < m_eq + m_in) sf.row_sign[static_cast<std::size_t>(i)] = -1.0;
    }
  }
  return sf;
}

struct Tableau {
  Eigen::MatrixXd T;       // rows x (cols), current B^{-1} A
  Eigen::VectorXd rhs;     // B^{-1} b
  std::vector<int> basis;  // basic column per row
};

// One simplex phase on columns [0, n_cols). Returns false on iteration cap.
bool run_simplex(Tableau& tab, const Eigen::VectorXd& cost, int n_cols, long& iters,
                 long max_iters, bool& unbounded) {
  const int m = static_cast<int>(tab.rhs.size());
  unbounded = false;
  int degenerate_run = 0;
  bool bland = false;

  while (iters < max_iters) {
    // Reduced costs r_j = c_j - c_B . T_col(j).
    Eigen::VectorXd cb(m);
    for (int i = 0; i < m; ++i) cb(i) = cost(tab.basis[i]);
    Eigen::RowVectorXd r = cost.head(n_cols).transpose() - cb.transpose() * tab.T.leftCols(n_cols);

    int enter = -1;
    if (!bland) {
      double best = -kPivotTol;
      for (int j = 0; j < n_cols; ++j)
        if (r(j) < best) {
          best = r(j);
          enter = j;
        }
    } else {
      for (int j = 0; j < n_cols; ++j)
        if (r(j) < -kPivotTol) {
          enter = j;
          break;
        }
    }
    if (enter < 0) return true;  // optimal

    int leave = -1;
    double best_ratio = kInf;
    for (int i = 0; i < m; ++i) {
      const double a = tab.T(i, enter);
      if (a > kPivotTol) {
        const double ratio = tab.rhs(i) / a;
        if (ratio < best_ratio - 1e-12 ||
            (ratio < best_ratio + 1e-12 && (leave < 0 || tab.basis[i] < tab.basis[leave]))) {
          best_ratio = ratio;
          leave = i;
        }
      }
    }
    if (leave < 0) {
      unbounded = true;
      return true;
    }
    if (best_ratio < 1e-12) {
      if (++degenerate_run > 50) bland = true;
    } else {
      degenerate_run = 0;
      bland = false;
    }

    // Pivot.
    const double piv = tab.T(leave, enter);
    tab.T.row(leave) /= piv;
    tab.rhs(leave) /= piv;
    for (int i = 0; i < m; ++i) {
      if (i == leave) continue;
      const double f = tab.T(i, enter);
      if (f != 0.0) {
        tab.T.row(i) -= f * tab.T.row(leave);
        tab.rhs(i) -= f * tab.rhs(leave);
      }
    }
    tab.basis[leave] = enter;
    ++iters;
  }
  return false;
}

}  // namespace

const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::optimal: return "optimal";
    case SolveStatus::feasible: return "feasible";
    case SolveStatus::infeasible: return "infeasible";
    default: return "budget_exhausted";
  }
}

void LinearProgram::validate() const {
  const int n = num_vars();
  if (n == 0) throw ConfigError("LinearProgram: empty cost vector");
  if (eq_A.size() && (eq_A.cols() != n || eq_A.rows() != eq_b.size()))
    throw ConfigError("LinearProgram: equality dimensions inconsistent");
  if (eq_b.size() && !eq_A.size()) throw ConfigError("LinearProgram: eq_b without eq_A");
  if (ineq_A.size() && (ineq_A.cols() != n || ineq_A.rows() != ineq_b.size()))
    throw ConfigError("LinearProgram: inequality dimensions inconsistent");
  if (ineq_b.size() && !ineq_A.size()) throw ConfigError("LinearProgram: ineq_b without ineq_A");
  if (lower.size() && lower.size() != n) throw ConfigError("LinearProgram: bad lower bound size");
  if (upper.size() && upper.size() != n) throw ConfigError("LinearProgram: bad upper bound size");
}

SolveReport solve_lp(const LinearProgram& lp, double tol) {
  lp.validate();
  const auto t0 = std::chrono::steady_clock::now();
  SolveReport rep;

  StandardForm sf = to_standard_form(lp);
  const int m = static_cast<int>(sf.b.size());
  const int n_cols = static_cast<int>(sf.A.cols());

  // Phase 1 tableau with artificial columns appended.
  Tableau tab;
  tab.T = Eigen::MatrixXd::Zero(m, n_cols + m);
  tab.T.leftCols(n_cols) = sf.A;
  tab.T.rightCols(m) = Eigen::MatrixXd::Identity(m, m);
  tab.rhs = sf.b;
  tab.basis.resize(m);
  for (int i = 0; i < m; ++i) tab.basis[i] = n_cols + i;

  Eigen::VectorXd phase1_cost = Eigen::VectorXd::Zero(n_cols + m);
  phase1_cost.tail(m).setOnes();

  long iters = 0;
  const long max_iters = 400L * (m + n_cols) + 1000;
  bool unbounded = false;
  if (!run_simplex(tab, phase1_cost, n_cols + m, iters, max_iters, unbounded)) {
    rep.status = SolveStatus::budget_exhausted;
    rep.diagnostic = "phase-1 iteration cap";
    rep.iterations = iters;
    return rep;
  }
  double phase1_obj = 0.0;
  for (int i = 0; i < m; ++i)
    if (tab.basis[i] >= n_cols) phase1_obj += tab.rhs(i);
  if (phase1_obj > tol) {
    rep.status = SolveStatus::infeasible;
    rep.diagnostic = "phase-1 objective " + std::to_string(phase1_obj) + " > tol";
    rep.iterations = iters;
    rep.max_violation = phase1_obj;
    return rep;
  }

  // Drive remaining artificials out of the basis (or mark rows redundant).
  for (int i = 0; i < m; ++i) {
    if (tab.basis[i] < n_cols) continue;
    int enter = -1;
    for (int j = 0; j < n_cols; ++j)
      if (std::abs(tab.T(i, j)) > kPivotTol) {
        enter = j;
        break;
      }
    if (enter < 0) continue;  // redundant row; artificial stays basic at level 0
    const double piv = tab.T(i, enter);
    tab.T.row(i) /= piv;
    tab.rhs(i) /= piv;
    for (int k = 0; k < m; ++k) {
      if (k == i) continue;
      const double f = tab.T(k, enter);
      if (f != 0.0) {
        tab.T.row(k) -= f * tab.T.row(i);
        tab.rhs(k) -= f * tab.rhs(i);
      }
    }
    tab.basis[i] = enter;
  }

  // Phase 2: artificial columns get +inf-ish cost by exclusion (never re-enter:
  // we restrict pricing to the first n_cols columns).
  Eigen::VectorXd phase2_cost = Eigen::VectorXd::Zero(n_cols + m);
  phase2_cost.head(n_cols) = sf.c;
  if (!run_simplex(tab, phase2_cost, n_cols, iters, max_iters, unbounded)) {
    rep.status = SolveStatus::budget_exhausted;
    rep.diagnostic = "phase-2 iteration cap";
    rep.iterations = iters;
    return rep;
  }
  if (unbounded) {
    rep.status = SolveStatus::feasible;
    rep.diagnostic = "objective unbounded below";
    rep.iterations = iters;
  }

  // Recover x.
  Eigen::VectorXd y = Eigen::VectorXd::Zero(n_cols);
  for (int i = 0; i < m; ++i)
    if (tab.basis[i] < n_cols) y(tab.basis[i]) = tab.rhs(i);
  const int n = lp.num_vars();
  rep.solution.resize(n);
  for (int j = 0; j < n; ++j) {
    double v = sf.shift[j] + sf.sign[j] * y(sf.col_of_var[j]);
    if (sf.neg_col_of_var[j] >= 0) v -= y(sf.neg_col_of_var[j]);
    rep.solution(j) = v;
  }
  rep.objective = lp.cost.dot(rep.solution);
  rep.iterations = iters;

  // Duals from reduced costs of the artificial (identity) columns:
  // pi = c_B B^{-1}, and T.rightCols(m) == B^{-1}.
  Eigen::VectorXd cb(m);
  for (int i = 0; i < m; ++i) cb(i) = phase2_cost(tab.basis[i]);
  Eigen::VectorXd pi = tab.T.rightCols(m).transpose() * cb;
  rep.duals_eq.resize(sf.n_eq);
  for (int i = 0; i < sf.n_eq; ++i) rep.duals_eq(i) = pi(i) * sf.row_sign[static_cast<std::size_t>(i)];
  rep.duals_ineq.resize(sf.n_ineq);
  for (int i = 0; i < sf.n_ineq; ++i)
    rep.duals_ineq(i) = pi(sf.n_eq + i) * sf.row_sign[static_cast<std::size_t>(sf.n_eq + i)];

  if (rep.status != SolveStatus::feasible) {
    rep.status = SolveStatus::optimal;
    rep.max_violation = lp_kkt_residual(lp, rep);
    if (rep.max_violation > tol) {
      rep.status = SolveStatus::feasible;
      rep.diagnostic = "KKT residual above tol after optimality claim";
    }
  }
  rep.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

double lp_kkt_residual(const LinearProgram& lp, const SolveReport& report) {
  const Eigen::VectorXd& x = report.solution;
  const int n = lp.num_vars();
  double res = 0.0;

  if (lp.eq_A.size()) res = std::max(res, (lp.eq_A * x - lp.eq_b).cwiseAbs().maxCoeff());
  Eigen::VectorXd slack;
  if (lp.ineq_A.size()) {
    slack = lp.ineq_A * x - lp.ineq_b;
    res = std::max(res, std::max(0.0, -slack.minCoeff()));
  }
  for (int j = 0; j < n; ++j) {
    if (lp.lower.size() && finite(lp.lower(j))) res = std::max(res, lp.lower(j) - x(j));
    if (lp.upper.size() && finite(lp.upper(j))) res = std::max(res, x(j) - lp.upper(j));
  }

  // Stationarity: c - eq_A' l - ineq_A' m = nu, with nu matching active bounds.
  Eigen::VectorXd nu = lp.cost;
  if (lp.eq_A.size()) nu -= lp.eq_A.transpose() * report.duals_eq;
  if (lp.ineq_A.size()) nu -= lp.ineq_A.transpose() * report.duals_ineq;
  const double scale = 1.0 + lp.cost.cwiseAbs().maxCoeff();
  for (int j = 0; j < n; ++j) {
    const double lo = lp.lower.size() ? lp.lower(j) : -kInf;
    const double hi = lp.upper.size() ? lp.upper(j) : kInf;
    const bool at_lo = finite(lo) && x(j) <= lo + 1e-7;
    const bool at_hi = finite(hi) && x(j) >= hi - 1e-7;
    double viol;
    if (at_lo && at_hi)
      viol = 0.0;  // fixed variable, any nu admissible
    else if (at_lo)
      viol = std::max(0.0, -nu(j));
    else if (at_hi)
      viol = std::max(0.0, nu(j));
    else
      viol = std::abs(nu(j));
    res = std::max(res, viol / scale);
  }
  if (lp.ineq_A.size()) {
    if (report.duals_ineq.size() != lp.ineq_b.size()) return kInf;
    res = std::max(res, std::max(0.0, -report.duals_ineq.minCoeff()));
    for (int i = 0; i < slack.size(); ++i)
      res = std::max(res, std::abs(report.duals_ineq(i) * slack(i)) / scale);
  }
  return res;
}

}  // namespace pk::opt
