#include "pivotkit/opt/nlp.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

#include "pivotkit/errors.hpp"

namespace pk::opt {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Eigen::VectorXd clip_to_box(const Eigen::VectorXd& x, const Eigen::VectorXd& lo,
                            const Eigen::VectorXd& hi) {
  if (!lo.size()) return x;
  return x.cwiseMax(lo).cwiseMin(hi);
}

std::string point_str(const Eigen::VectorXd& x) {
  std::ostringstream os;
  os << "[";
  for (int i = 0; i < std::min<int>(8, static_cast<int>(x.size())); ++i)
    os << (i ? ", " : "") << x(i);
  if (x.size() > 8) os << ", ...";
  os << "]";
  return os.str();
}

// Evaluation wrapper with finite-difference fallbacks.
struct Problem {
  const NonlinearProgram& nlp;

  double f(const Eigen::VectorXd& x) const { return nlp.cost(x); }

  Eigen::VectorXd fgrad(const Eigen::VectorXd& x) const {
    if (nlp.cost_grad) return nlp.cost_grad(x);
    const int n = static_cast<int>(x.size());
    Eigen::VectorXd g(n);
    Eigen::VectorXd xp = x;
    for (int j = 0; j < n; ++j) {
      const double h = 1e-6 * (1.0 + std::abs(x(j)));
      xp(j) = x(j) + h;
      const double fp = nlp.cost(xp);
      xp(j) = x(j) - h;
      const double fm = nlp.cost(xp);
      xp(j) = x(j);
      g(j) = (fp - fm) / (2.0 * h);
    }
    return g;
  }

  Eigen::VectorXd ceq(const Eigen::VectorXd& x) const {
    return nlp.eq ? nlp.eq(x) : Eigen::VectorXd();
  }
  Eigen::VectorXd cineq(const Eigen::VectorXd& x) const {
    return nlp.ineq ? nlp.ineq(x) : Eigen::VectorXd();
  }

  Eigen::MatrixXd jac(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& fn,
                      const std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>& analytic,
                      const Eigen::VectorXd& x) const {
    if (analytic) return analytic(x);
    const int n = static_cast<int>(x.size());
    Eigen::VectorXd f0 = fn(x);
    Eigen::MatrixXd J(f0.size(), n);
    Eigen::VectorXd xp = x;
    for (int j = 0; j < n; ++j) {
      const double h = 1e-6 * (1.0 + std::abs(x(j)));
      xp(j) = x(j) + h;
      const Eigen::VectorXd fp = fn(xp);
      xp(j) = x(j) - h;
      const Eigen::VectorXd fm = fn(xp);
      xp(j) = x(j);
      J.col(j) = (fp - fm) / (2.0 * h);
    }
    return J;
  }

  Eigen::MatrixXd jeq(const Eigen::VectorXd& x) const { return jac(nlp.eq, nlp.eq_jac, x); }
  Eigen::MatrixXd jineq(const Eigen::VectorXd& x) const { return jac(nlp.ineq, nlp.ineq_jac, x); }
};

}  // namespace

SolveReport solve_nlp(const NonlinearProgram& nlp, const NlpOptions& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  if (!nlp.cost) throw ConfigError("solve_nlp: cost callable missing");
  const int n = static_cast<int>(nlp.x0.size());
  if (n == 0) throw ConfigError("solve_nlp: empty initial point");
  if (nlp.lower.size() && (nlp.lower.size() != n || nlp.upper.size() != n))
    throw ConfigError("solve_nlp: bound dimensions inconsistent");
  if (nlp.lower.size()) {
    for (int j = 0; j < n; ++j)
      if (nlp.x0(j) < nlp.lower(j) - 1e-12 || nlp.x0(j) > nlp.upper(j) + 1e-12)
        throw ConfigError("solve_nlp: initial point outside bounds");
  }

  Problem prob{nlp};
  Eigen::VectorXd x = clip_to_box(nlp.x0, nlp.lower, nlp.upper);

  Eigen::VectorXd c0 = prob.ceq(x);
  Eigen::VectorXd h0 = prob.cineq(x);
  const int m_eq = static_cast<int>(c0.size());
  const int m_in = static_cast<int>(h0.size());
  Eigen::VectorXd lam = Eigen::VectorXd::Zero(m_eq);
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(m_in);
  double rho = opts.rho0;

  if (!std::isfinite(prob.f(x)))
    throw NumericalError("solve_nlp: non-finite cost at x0 = " + point_str(x));

  auto violation = [&](const Eigen::VectorXd& c, const Eigen::VectorXd& h) {
    double v = 0.0;
    if (c.size()) v = std::max(v, c.cwiseAbs().maxCoeff());
    if (h.size()) v = std::max(v, std::max(0.0, -h.minCoeff()));
    return v;
  };

  // Augmented Lagrangian value and gradient at x (PHR form for inequalities).
  auto al_value = [&](const Eigen::VectorXd& xx) -> double {
    double v = prob.f(xx);
    if (!std::isfinite(v)) return kInf;
    if (m_eq) {
      const Eigen::VectorXd c = prob.ceq(xx);
      if (!c.allFinite()) return kInf;
      v += lam.dot(c) + 0.5 * rho * c.squaredNorm();
    }
    if (m_in) {
      const Eigen::VectorXd h = prob.cineq(xx);
      if (!h.allFinite()) return kInf;
      for (int i = 0; i < m_in; ++i) {
        const double t = std::max(0.0, mu(i) - rho * h(i));
        v += (t * t - mu(i) * mu(i)) / (2.0 * rho);
      }
    }
    return v;
  };
  auto al_grad = [&](const Eigen::VectorXd& xx) -> Eigen::VectorXd {
    Eigen::VectorXd g = prob.fgrad(xx);
    if (m_eq) {
      const Eigen::VectorXd c = prob.ceq(xx);
      g += prob.jeq(xx).transpose() * (lam + rho * c);
    }
    if (m_in) {
      const Eigen::VectorXd h = prob.cineq(xx);
      Eigen::VectorXd w(m_in);
      for (int i = 0; i < m_in; ++i) w(i) = std::max(0.0, mu(i) - rho * h(i));
      g -= prob.jineq(xx).transpose() * w;
    }
    return g;
  };

  SolveReport rep;
  double best_score = kInf;
  long total_inner = 0;

  double prev_viol = kInf;
  for (int outer = 0; outer < opts.max_outer; ++outer) {
    // --- inner BFGS with projection onto the box ---
    Eigen::MatrixXd Hinv = Eigen::MatrixXd::Identity(n, n);
    double fx = al_value(x);
    Eigen::VectorXd g = al_grad(x);
    const double gtol = std::max(opts.tol * 0.1, opts.tol * 0.01 * (1.0 + std::abs(fx)));

    for (int it = 0; it < opts.max_inner; ++it, ++total_inner) {
      if (!g.allFinite())
        throw NumericalError("solve_nlp: non-finite gradient at x = " + point_str(x));
      Eigen::VectorXd d = -(Hinv * g);
      if (g.dot(d) > -1e-14 * g.norm() * d.norm()) {
        Hinv.setIdentity();
        d = -g;
      }

      // Backtracking Armijo with box projection.
      double t = 1.0;
      double fnew = kInf;
      Eigen::VectorXd xnew;
      const double slope = g.dot(d);
      bool accepted = false;
      for (int ls = 0; ls < 45; ++ls) {
        xnew = clip_to_box(x + t * d, nlp.lower, nlp.upper);
        fnew = al_value(xnew);
        if (std::isfinite(fnew) && fnew <= fx + 1e-4 * t * slope + 1e-14 * std::abs(fx)) {
          accepted = true;
          break;
        }
        t *= 0.5;
      }
      if (!accepted) break;  // line search stalled: inner converged as far as it can

      const Eigen::VectorXd gnew = al_grad(xnew);
      const Eigen::VectorXd s = xnew - x;
      const Eigen::VectorXd yv = gnew - g;
      const double sy = s.dot(yv);
      if (sy > 1e-12 * s.norm() * yv.norm()) {
        // Sherman-Morrison BFGS inverse update.
        const Eigen::VectorXd Hy = Hinv * yv;
        const double yHy = yv.dot(Hy);
        Hinv += ((sy + yHy) / (sy * sy)) * (s * s.transpose()) -
                (Hy * s.transpose() + s * Hy.transpose()) / sy;
      }
      x = xnew;
      fx = fnew;
      g = gnew;
      if (s.lpNorm<Eigen::Infinity>() < 1e-14 && g.lpNorm<Eigen::Infinity>() < gtol) break;
      if (g.lpNorm<Eigen::Infinity>() < gtol) break;
    }

    // --- multiplier / penalty update ---
    const Eigen::VectorXd c = prob.ceq(x);
    const Eigen::VectorXd h = prob.cineq(x);
    const double viol = violation(c, h);
    if (m_eq) lam += rho * c;
    for (int i = 0; i < m_in; ++i) mu(i) = std::max(0.0, mu(i) - rho * h(i));

    // Projected-gradient stationarity of the AL (multipliers just updated
    // make this the Lagrangian gradient to first order).
    const Eigen::VectorXd gl = al_grad(x);
    const Eigen::VectorXd xproj = clip_to_box(x - gl, nlp.lower, nlp.upper);
    const double pg = (x - xproj).lpNorm<Eigen::Infinity>() / (1.0 + x.lpNorm<Eigen::Infinity>());

    const double score = viol * 1e6 + std::max(pg, 0.0);
    if (score < best_score) {
      best_score = score;
      rep.solution = x;
      rep.objective = prob.f(x);
      rep.max_violation = viol;
      rep.duals_eq = lam;
      rep.duals_ineq = mu;
    }

    if (viol <= opts.tol && pg <= opts.tol) {
      rep.status = SolveStatus::optimal;
      rep.solution = x;
      rep.objective = prob.f(x);
      rep.max_violation = viol;
      rep.duals_eq = lam;
      rep.duals_ineq = mu;
      rep.iterations = total_inner;
      rep.wall_time_s =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      return rep;
    }
    if (viol > 0.25 * prev_viol && rho < opts.rho_max) rho *= opts.rho_growth;
    prev_viol = viol;
  }

  rep.status = SolveStatus::budget_exhausted;
  rep.diagnostic = "outer budget exhausted";
  rep.iterations = total_inner;
  rep.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

double nlp_kkt_residual(const NonlinearProgram& nlp, const SolveReport& report) {
  Problem prob{nlp};
  const Eigen::VectorXd& x = report.solution;
  double res = 0.0;
  Eigen::VectorXd g = prob.fgrad(x);
  if (nlp.eq) {
    const Eigen::VectorXd c = prob.ceq(x);
    res = std::max(res, c.size() ? c.cwiseAbs().maxCoeff() : 0.0);
    if (report.duals_eq.size() == c.size()) g += prob.jeq(x).transpose() * report.duals_eq;
  }
  if (nlp.ineq) {
    const Eigen::VectorXd h = prob.cineq(x);
    if (h.size()) res = std::max(res, std::max(0.0, -h.minCoeff()));
    if (report.duals_ineq.size() == h.size()) g -= prob.jineq(x).transpose() * report.duals_ineq;
  }
  const Eigen::VectorXd xproj = clip_to_box(x - g, nlp.lower, nlp.upper);
  res = std::max(res, (x - xproj).lpNorm<Eigen::Infinity>() / (1.0 + x.lpNorm<Eigen::Infinity>()));
  return res;
}

}  // namespace pk::opt
