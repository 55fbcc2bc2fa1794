#include "pivotkit/opt/bnb.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "pivotkit/errors.hpp"

namespace pk::opt {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

void MixedIntegerLP::validate() const {
  lp.validate();
  const int n = lp.num_vars();
  for (int b : binary_indices)
    if (b < 0 || b >= n) throw ConfigError("MixedIntegerLP: binary index out of range");
  for (const auto& c : couplings) {
    if (!std::isfinite(c.big_m)) throw ConfigError("MixedIntegerLP: big-M not finite");
    if (c.binary < 0 || c.binary >= n) throw ConfigError("MixedIntegerLP: coupling binary index");
    if (c.row < 0 || c.row >= lp.ineq_b.size())
      throw ConfigError("MixedIntegerLP: coupling row index");
  }
  if (!incumbent_hint.empty() && incumbent_hint.size() != binary_indices.size())
    throw ConfigError("MixedIntegerLP: incumbent hint size mismatch");
}

SolveReport branch_and_bound(const MixedIntegerLP& milp, const BnbOptions& opts) {
  milp.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const int n = milp.lp.num_vars();
  const auto& bins = milp.binary_indices;

  // Working bounds: binaries live in [0, 1] intersected with declared bounds.
  LinearProgram base = milp.lp;
  if (!base.lower.size()) base.lower = Eigen::VectorXd::Constant(n, -kInf);
  if (!base.upper.size()) base.upper = Eigen::VectorXd::Constant(n, kInf);
  for (int b : bins) {
    base.lower(b) = std::max(base.lower(b), 0.0);
    base.upper(b) = std::min(base.upper(b), 1.0);
  }

  SolveReport incumbent;
  incumbent.status = SolveStatus::infeasible;
  double incumbent_obj = kInf;
  long nodes = 0;

  // Seed the incumbent from the hint, if it is feasible.
  if (!milp.incumbent_hint.empty()) {
    LinearProgram fixed = base;
    for (std::size_t k = 0; k < bins.size(); ++k) {
      const double v = std::round(milp.incumbent_hint[k]);
      fixed.lower(bins[static_cast<int>(k)]) = v;
      fixed.upper(bins[static_cast<int>(k)]) = v;
    }
    SolveReport r = solve_lp(fixed);
    ++nodes;
    if (r.status == SolveStatus::optimal) {
      incumbent = r;
      incumbent_obj = r.objective;
    }
  }

  struct Node {
    std::vector<std::pair<int, int>> fixes;  // (binary list index, value)
  };
  std::vector<Node> stack;
  stack.push_back({});
  double root_bound = -kInf;
  bool budget_hit = false;

  while (!stack.empty()) {
    if (nodes >= opts.node_budget) {
      budget_hit = true;
      break;
    }
    Node node = stack.back();
    stack.pop_back();

    LinearProgram sub = base;
    for (auto [k, v] : node.fixes) {
      sub.lower(bins[k]) = v;
      sub.upper(bins[k]) = v;
    }
    SolveReport relax = solve_lp(sub);
    ++nodes;
    if (relax.status == SolveStatus::infeasible) continue;
    if (relax.status != SolveStatus::optimal) continue;  // unbounded/budget: prune defensively? no: treat as no-bound
    if (node.fixes.empty()) root_bound = relax.objective;
    if (relax.objective >= incumbent_obj - opts.gap_tol) continue;  // bound prune

    // Most fractional binary, lowest index on ties.
    int branch_k = -1;
    double best_frac_dist = kInf;
    for (std::size_t k = 0; k < bins.size(); ++k) {
      const double v = relax.solution(bins[k]);
      const double frac = std::abs(v - std::round(v));
      if (frac > opts.int_tol) {
        const double dist = std::abs(frac - 0.5);
        if (dist < best_frac_dist - 1e-15) {
          best_frac_dist = dist;
          branch_k = static_cast<int>(k);
        }
      }
    }
    if (branch_k < 0) {
      // Integral: candidate incumbent.
      if (relax.objective < incumbent_obj - 1e-12) {
        incumbent = relax;
        incumbent_obj = relax.objective;
      }
      continue;
    }
    // DFS: explore the rounded side of the fractional value first.
    const double v = relax.solution(bins[branch_k]);
    const int first = v >= 0.5 ? 1 : 0;
    Node a = node, b = node;
    a.fixes.emplace_back(branch_k, first);
    b.fixes.emplace_back(branch_k, 1 - first);
    stack.push_back(b);
    stack.push_back(a);
  }

  SolveReport rep = incumbent;
  rep.iterations = nodes;
  rep.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (budget_hit) {
    rep.status = SolveStatus::budget_exhausted;
    rep.diagnostic = incumbent_obj < kInf ? "node budget hit; incumbent returned"
                                          : "node budget hit; no incumbent found";
    return rep;
  }
  if (incumbent_obj == kInf) {
    rep.status = SolveStatus::infeasible;
    rep.diagnostic = "no integral feasible point";
    return rep;
  }
  rep.status = SolveStatus::optimal;
  if (root_bound > -kInf && incumbent_obj < root_bound - 1e-9)
    rep.diagnostic = "warning: incumbent below root bound";
  // Snap binaries exactly.
  for (int bidx : bins) rep.solution(bidx) = std::round(rep.solution(bidx));
  return rep;
}

}  // namespace pk::opt
