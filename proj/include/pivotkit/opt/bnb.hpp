#pragma once

#include <vector>

#include "pivotkit/opt/lp.hpp"

namespace pk::opt {

/// Activation row metadata: inequality row `row` bounds a continuous quantity
/// by big_m * x[binary], i.e. the row reads  big_m * z - a.x >= 0 (or similar)
/// and is only meaningful together with z in {0, 1}. Kept explicit so the
/// problem can be validated (finite big-M, indices in range).
struct ActivationCoupling {
  int row = -1;
  int binary = -1;
  double big_m = 0.0;
};

/// A LinearProgram whose `binary_indices` variables are additionally
/// restricted to {0, 1}. Activation couplings are ordinary rows of the LP;
/// the list is metadata used for validation.
struct MixedIntegerLP {
  LinearProgram lp;
  std::vector<int> binary_indices;
  std::vector<ActivationCoupling> couplings;

  /// Optional integral assignment (size = binary_indices.size()) used to seed
  /// the incumbent, e.g. the previous timestep's contact pattern.
  std::vector<double> incumbent_hint;

  void validate() const;
};

struct BnbOptions {
  long node_budget = 100000;
  double gap_tol = 1e-6;
  double int_tol = 1e-6;
};

/// Depth-first branch and bound on the binary variables. Branching picks the
/// most fractional binary, lowest index on ties. status = optimal means the
/// incumbent is within gap_tol of the best remaining LP bound and all binaries
/// are integral within int_tol; node budget exhaustion returns the incumbent
/// (status budget_exhausted) or infeasible when none was found.
SolveReport branch_and_bound(const MixedIntegerLP& milp, const BnbOptions& opts = {});

}  // namespace pk::opt
