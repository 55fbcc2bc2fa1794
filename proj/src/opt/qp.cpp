#include "pivotkit/opt/qp.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "pivotkit/errors.hpp"

namespace pk::opt {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Unified constraint view: n_i' x >= b_i over [ineq rows, lower bounds, upper bounds].
struct ConstraintSet {
  const QuadraticProgram* qp = nullptr;
  std::vector<int> bound_var;   // variable index for bound rows
  std::vector<double> bound_b;  // rhs
  std::vector<int> bound_dir;   // +1 lower (x >= l), -1 upper (-x >= -u)
  int n_ineq = 0;

  int total() const { return n_ineq + static_cast<int>(bound_var.size()); }

  double value(int i, const Eigen::VectorXd& x) const {
    if (i < n_ineq) return qp->ineq_A.row(i).dot(x) - qp->ineq_b(i);
    const int k = i - n_ineq;
    return bound_dir[k] * x(bound_var[k]) - bound_b[k];
  }

  Eigen::VectorXd normal(int i) const {
    if (i < n_ineq) return qp->ineq_A.row(i).transpose();
    Eigen::VectorXd n = Eigen::VectorXd::Zero(qp->num_vars());
    const int k = i - n_ineq;
    n(bound_var[k]) = bound_dir[k];
    return n;
  }
};

}  // namespace

void QuadraticProgram::validate() const {
  const int n = num_vars();
  if (n == 0) throw ConfigError("QuadraticProgram: empty cost vector");
  if (hessian.rows() != n || hessian.cols() != n)
    throw ConfigError("QuadraticProgram: Hessian dimension mismatch");
  if (eq_A.size() && (eq_A.cols() != n || eq_A.rows() != eq_b.size()))
    throw ConfigError("QuadraticProgram: equality dimensions inconsistent");
  if (ineq_A.size() && (ineq_A.cols() != n || ineq_A.rows() != ineq_b.size()))
    throw ConfigError("QuadraticProgram: inequality dimensions inconsistent");
  if (lower.size() && lower.size() != n) throw ConfigError("QuadraticProgram: bad lower size");
  if (upper.size() && upper.size() != n) throw ConfigError("QuadraticProgram: bad upper size");
}

SolveReport solve_qp(const QuadraticProgram& qp, double tol, QpWarmStart* warm) {
  qp.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const int n = qp.num_vars();
  SolveReport rep;

  if (!qp.hessian.isApprox(qp.hessian.transpose(), 1e-9))
    throw ConfigError("solve_qp: Hessian not symmetric");

  // PSD check + ridge for singular Hessians; indefinite rejected.
  Eigen::MatrixXd H = 0.5 * (qp.hessian + qp.hessian.transpose());
  const double hscale = std::max(1.0, H.cwiseAbs().maxCoeff());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(H, Eigen::EigenvaluesOnly);
  const double min_eig = eig.eigenvalues().minCoeff();
  if (min_eig < -1e-9 * hscale) {
    rep.status = SolveStatus::infeasible;
    rep.diagnostic = "Hessian indefinite (min eigenvalue " + std::to_string(min_eig) + ")";
    return rep;
  }
  if (min_eig < 1e-10 * hscale) {
    H.diagonal().array() += 1e-9 * hscale - std::min(0.0, min_eig);
    rep.diagnostic = "ridge added for PSD-singular Hessian";
  }
  Eigen::LLT<Eigen::MatrixXd> llt(H);
  if (llt.info() != Eigen::Success) {
    H.diagonal().array() += 1e-8 * hscale;
    llt.compute(H);
    if (llt.info() != Eigen::Success) {
      rep.status = SolveStatus::infeasible;
      rep.diagnostic = "Cholesky factorization failed";
      return rep;
    }
  }

  ConstraintSet cs;
  cs.qp = &qp;
  cs.n_ineq = static_cast<int>(qp.ineq_b.size());
  for (int j = 0; j < n; ++j)
    if (qp.lower.size() && std::isfinite(qp.lower(j))) {
      cs.bound_var.push_back(j);
      cs.bound_b.push_back(qp.lower(j));
      cs.bound_dir.push_back(1);
    }
  for (int j = 0; j < n; ++j)
    if (qp.upper.size() && std::isfinite(qp.upper(j))) {
      cs.bound_var.push_back(j);
      cs.bound_b.push_back(-qp.upper(j));
      cs.bound_dir.push_back(-1);
    }
  const int m_total = cs.total();
  const int m_eq = static_cast<int>(qp.eq_b.size());

  // Active set: equality rows always in; working indices refer to cs rows.
  std::vector<int> active;        // cs row indices
  Eigen::VectorXd x = llt.solve(-qp.cost);
  Eigen::VectorXd lam_eq = Eigen::VectorXd::Zero(m_eq);
  Eigen::VectorXd lam(0);

  // N holds active constraint normals (equalities first, fixed).
  Eigen::MatrixXd Neq(n, m_eq);
  for (int i = 0; i < m_eq; ++i) Neq.col(i) = qp.eq_A.row(i).transpose();

  auto kkt_solve = [&](const Eigen::MatrixXd& N, const Eigen::VectorXd& rhs_top,
                       const Eigen::VectorXd& rhs_bot, Eigen::VectorXd& dx,
                       Eigen::VectorXd& dl) -> bool {
    // Solve [H N; N' 0][dx; -dl] = [rhs_top; rhs_bot] via Schur complement.
    const int a = static_cast<int>(N.cols());
    Eigen::VectorXd Hi_rhs = llt.solve(rhs_top);
    if (a == 0) {
      dx = Hi_rhs;
      dl.resize(0);
      return true;
    }
    Eigen::MatrixXd HiN = llt.solve(N);
    Eigen::MatrixXd S = N.transpose() * HiN;
    S.diagonal().array() += 1e-14 * hscale;
    Eigen::LDLT<Eigen::MatrixXd> sldlt(S);
    if (sldlt.info() != Eigen::Success) return false;
    dl = sldlt.solve(N.transpose() * Hi_rhs - rhs_bot);
    dx = Hi_rhs - HiN * dl;
    return true;
  };

  // Enforce equalities first.
  if (m_eq > 0) {
    Eigen::VectorXd dx, dl;
    if (!kkt_solve(Neq, -qp.cost, qp.eq_b, dx, dl)) {
      rep.status = SolveStatus::infeasible;
      rep.diagnostic = "degenerate equality constraints";
      return rep;
    }
    x = dx;
    lam_eq = -dl;  // kkt_solve returns dl with H x + N dl = -c, so lambda = -dl
  }

  // Scan order: warm-start rows first, then the rest.
  std::vector<int> scan_order;
  scan_order.reserve(static_cast<std::size_t>(m_total));
  if (warm)
    for (int i : warm->active)
      if (i >= 0 && i < m_total) scan_order.push_back(i);
  for (int i = 0; i < m_total; ++i)
    if (!warm || std::find(scan_order.begin(), scan_order.end(), i) == scan_order.end())
      scan_order.push_back(i);

  const double feas_tol = tol;
  long iters = 0;
  const long max_iters = 50L * (m_total + n) + 200;

  while (iters++ < max_iters) {
    // Most violated inactive constraint (first pass honors warm order).
    int p = -1;
    double worst = -feas_tol;
    for (int i : scan_order) {
      if (std::find(active.begin(), active.end(), i) != active.end()) continue;
      const double v = cs.value(i, x);
      if (v < worst) {
        worst = v;
        p = i;
      }
    }
    if (p < 0) break;  // primal feasible -> optimal

    // Inner loop: take full/partial steps until p becomes active. The
    // incoming constraint's multiplier accumulates over partial steps.
    bool added = false;
    double lam_p = 0.0;
    long guard = 0;
    while (!added && guard++ < 2L * m_total + 4) {
      const int a = static_cast<int>(active.size());
      Eigen::MatrixXd N(n, m_eq + a);
      N.leftCols(m_eq) = Neq;
      for (int k = 0; k < a; ++k) N.col(m_eq + k) = cs.normal(active[static_cast<std::size_t>(k)]);

      // Direction for adding p: [H N; N' 0][z; -r] = [n_p; 0]
      Eigen::VectorXd z, r;
      if (!kkt_solve(N, cs.normal(p), Eigen::VectorXd::Zero(m_eq + a), z, r)) {
        rep.status = SolveStatus::infeasible;
        rep.diagnostic = "singular KKT system";
        return rep;
      }
      const double denom = cs.normal(p).dot(z);
      const double viol = -cs.value(p, x);

      // Partial step bound from active inequality multipliers.
      double t1 = kInf;
      int drop = -1;
      for (int k = 0; k < a; ++k) {
        const double rk = r(m_eq + k);
        if (rk > 1e-12) {
          const double t = lam(k) / rk;
          if (t < t1) {
            t1 = t;
            drop = k;
          }
        }
      }
      const double t2 = denom > 1e-12 ? viol / denom : kInf;
      const double t = std::min(t1, t2);
      if (!std::isfinite(t)) {
        rep.status = SolveStatus::infeasible;
        rep.diagnostic = "dual unbounded: constraints inconsistent";
        rep.iterations = iters;
        return rep;
      }
      if (denom > 1e-12) x += t * z;
      if (a > 0) lam -= t * r.tail(a);
      lam_eq -= t * r.head(m_eq);
      lam_p += t;

      if (t >= t2 - 1e-15 && t2 < kInf) {
        active.push_back(p);
        Eigen::VectorXd lam2(active.size());
        lam2.head(lam.size()) = lam;
        lam2(lam.size()) = lam_p;
        lam = lam2;
        added = true;
      } else {
        // Drop the blocking constraint and retry.
        active.erase(active.begin() + drop);
        Eigen::VectorXd lam2(active.size());
        for (int k = 0, w = 0; k < a; ++k)
          if (k != drop) lam2(w++) = lam(k);
        lam = lam2;
      }
    }
    if (!added) {
      rep.status = SolveStatus::budget_exhausted;
      rep.diagnostic = "inner add/drop cycle guard";
      rep.solution = x;
      rep.iterations = iters;
      return rep;
    }
  }

  if (iters >= max_iters) {
    rep.status = SolveStatus::budget_exhausted;
    rep.diagnostic = "outer iteration cap";
    rep.solution = x;
    rep.iterations = iters;
    return rep;
  }

  rep.status = SolveStatus::optimal;
  rep.solution = x;
  rep.objective = 0.5 * x.dot(qp.hessian * x) + qp.cost.dot(x);
  rep.iterations = iters;
  rep.duals_eq = lam_eq;
  rep.duals_ineq = Eigen::VectorXd::Zero(m_total);
  for (std::size_t k = 0; k < active.size(); ++k)
    rep.duals_ineq(active[k]) = std::max(0.0, lam(static_cast<int>(k)));
  rep.max_violation = qp_kkt_residual(qp, rep);
  if (rep.max_violation > std::max(tol, 1e2 * tol)) {
    rep.status = SolveStatus::feasible;
    rep.diagnostic += (rep.diagnostic.empty() ? "" : "; ") + std::string("KKT residual above tol");
  }
  if (warm) {
    warm->active = active;
  }
  rep.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

double qp_kkt_residual(const QuadraticProgram& qp, const SolveReport& report) {
  const Eigen::VectorXd& x = report.solution;
  const int n = qp.num_vars();
  double res = 0.0;

  if (qp.eq_A.size()) res = std::max(res, (qp.eq_A * x - qp.eq_b).cwiseAbs().maxCoeff());

  // Combined inequality list in the same order as duals_ineq.
  std::vector<Eigen::VectorXd> normals;
  std::vector<double> slacks;
  for (int i = 0; i < qp.ineq_b.size(); ++i) {
    normals.push_back(qp.ineq_A.row(i).transpose());
    slacks.push_back(qp.ineq_A.row(i).dot(x) - qp.ineq_b(i));
  }
  for (int j = 0; j < n; ++j)
    if (qp.lower.size() && std::isfinite(qp.lower(j))) {
      Eigen::VectorXd e = Eigen::VectorXd::Zero(n);
      e(j) = 1.0;
      normals.push_back(e);
      slacks.push_back(x(j) - qp.lower(j));
    }
  for (int j = 0; j < n; ++j)
    if (qp.upper.size() && std::isfinite(qp.upper(j))) {
      Eigen::VectorXd e = Eigen::VectorXd::Zero(n);
      e(j) = -1.0;
      normals.push_back(e);
      slacks.push_back(qp.upper(j) - x(j));
    }
  if (report.duals_ineq.size() != static_cast<Eigen::Index>(normals.size())) return kInf;

  const double scale = 1.0 + qp.cost.cwiseAbs().maxCoeff() + qp.hessian.cwiseAbs().maxCoeff();
  Eigen::VectorXd grad = qp.hessian * x + qp.cost;
  if (qp.eq_A.size()) grad -= qp.eq_A.transpose() * report.duals_eq;
  for (std::size_t i = 0; i < normals.size(); ++i) {
    const double mu = report.duals_ineq(static_cast<Eigen::Index>(i));
    grad -= mu * normals[i];
    res = std::max(res, -slacks[i]);                        // primal feasibility
    res = std::max(res, -mu);                               // dual cone
    res = std::max(res, std::abs(mu * slacks[i]) / scale);  // complementarity
  }
  res = std::max(res, grad.cwiseAbs().maxCoeff() / scale);  // stationarity
  return res;
}

}  // namespace pk::opt
