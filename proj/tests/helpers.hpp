#pragma once

#include "compatkit/core.hpp"
#include "compatkit/qp.hpp"
#include "compatkit/rng.hpp"

#include <algorithm>

namespace testing {

using namespace compat;

inline Matrix<double> gaussian(Index n, Index p, std::uint64_t seed) {
  Rng rng(seed);
  Matrix<double> X(n, p);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < p; ++j) X(i, j) = rng.normal();
  return X;
}

inline GramMatrix<double> random_gram(Index n, Index p, std::uint64_t seed) {
  return gram(standardize(gaussian(n, p, seed)));
}

inline ActiveSet random_active(Index s, Index p, std::uint64_t seed) {
  Rng rng(seed);
  auto d = rng.sample_without_replacement(p, s);
  std::sort(d.begin(), d.end());
  return ActiveSet(std::vector<Index>(d.begin(), d.end()), p);
}

/// Stationarity and feasibility of a QP point, recomputed from scratch.
inline double qp_kkt_residual(const qp::QpProblem<double>& prob, const Vector<double>& x,
                              const Vector<double>& y) {
  const Vector<double> stat = prob.P * x + prob.q + prob.A.transpose() * y;
  const Vector<double> ax = prob.A * x;
  double prim = 0.0;
  for (Index i = 0; i < ax.size(); ++i)
    prim = std::max({prim, prob.l(i) - ax(i), ax(i) - prob.u(i)});
  return std::max(stat.lpNorm<Eigen::Infinity>(), prim);
}

/// ‖v_S‖₁ = 1 and ‖v_{S^c}‖₁ ≤ 3, both within tol.
inline bool feasible(const ActiveSet& a, const Vector<double>& v, double tol = 1e-6) {
  double in = 0.0, out = 0.0;
  for (Index j = 0; j < v.size(); ++j) (a.contains(j) ? in : out) += std::abs(v(j));
  return std::abs(in - 1.0) <= tol && out <= 3.0 + tol;
}

}  // namespace testing
