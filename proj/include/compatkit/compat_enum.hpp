#pragma once

#include "compatkit/core.hpp"
#include "compatkit/qp.hpp"

#include <cstdint>

namespace compat {

/// One convex piece of the compatibility problem: the signs of v_S are fixed.
struct FixedSignSubproblem {
  const GramMatrix<double>& gram;
  const ActiveSet& active;
  const SignPattern& signs;
};

/// Decision vector is (v ∈ ℝ^p, u ∈ ℝ^{p-s}); ½xᵀPx = s·vᵀΣ̂v. Rows, in order:
///   Σ_{j∈S} z_j v_j = 1                    (1 row)
///   z_j v_j ≥ 0,              j ∈ S        (s rows)
///   v_j - u_k ≤ 0, v_j + u_k ≥ 0, j ∈ S^c  (2r rows, interleaved per j)
///   u_k ≥ 0                                (r rows)
///   Σ u_k ≤ 3                              (1 row, only when r > 0)
qp::QpProblem<double> build_fixed_sign_qp(const FixedSignSubproblem& sub);

struct PatternValue {
  double phi_sq = 0.0;
  Vector<double> v;
  qp::QpStatus status = qp::QpStatus::Solved;
};

/// φ²_z for a single sign pattern. Throws SolverFailure when the QP does not
/// reach a feasible optimum.
PatternValue phi_for_pattern(const FixedSignSubproblem& sub,
                             const qp::ToleranceConfig& tol = {});

struct EnumOptions {
  int threads = 1;
  Index s_max = 20;
  /// Stop as soon as some pattern drives φ² below kEpsilonZero.
  bool early_stop_on_zero = false;
  qp::ToleranceConfig tol{};
};

/// Exact φ² = min over the 2^{s-1} canonical sign patterns.
CompatResult phi_enumerate(const GramMatrix<double>& gram, const ActiveSet& active,
                           const EnumOptions& opts = {});

}  // namespace compat
