#pragma once

// Dense convex QP solver for
//
//   minimize ½xᵀPx + qᵀx  subject to  l ≤ Ax ≤ u
//
// using operator splitting (ADMM with over-relaxation and adaptive step
// size) followed by a polish step that solves the equality-constrained KKT
// system on the detected active set.

#include "compatkit/core.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <optional>
#include <ostream>
#include <type_traits>

namespace compat::qp {

/// Bounds at or beyond this magnitude are treated as infinite.
inline constexpr double kInfinity = 1e30;

enum class QpStatus { Solved, MaxIterations, PrimalInfeasible };

inline const char* to_string(QpStatus s) {
  switch (s) {
    case QpStatus::Solved: return "Solved";
    case QpStatus::MaxIterations: return "MaxIterations";
    case QpStatus::PrimalInfeasible: return "PrimalInfeasible";
  }
  return "Unknown";
}

template <typename Scalar>
using SparseRows = Eigen::SparseMatrix<Scalar, Eigen::RowMajor>;

template <typename Scalar>
struct QpProblem {
  Matrix<Scalar> P;
  Vector<Scalar> q;
  SparseRows<Scalar> A;
  Vector<Scalar> l;
  Vector<Scalar> u;

  Index num_vars() const { return q.size(); }
  Index num_constraints() const { return A.rows(); }

  void validate() const {
    const Index m = q.size();
    if (P.rows() != m || P.cols() != m || A.cols() != m || l.size() != A.rows() ||
        u.size() != A.rows())
      throw Error(ErrorKind::DimensionMismatch, "QP data dimensions disagree");
    for (Index i = 0; i < l.size(); ++i)
      if (!(l(i) <= u(i)))
        throw Error(ErrorKind::InvalidConfig, "QP bounds must satisfy l <= u");
  }
};

struct ToleranceConfig {
  double eps_abs = 1e-9;
  double eps_rel = 1e-9;
  double eps_prim_inf = 1e-7;
  double sigma = 1e-6;
  double rho = 0.1;
  double alpha = 1.6;
  int max_iter = 200000;
  int check_interval = 10;
  int adaptive_rho_interval = 50;
  double adaptive_rho_tolerance = 5.0;
  bool polish = true;
  /// Residual level (relative) at which polish attempts begin.
  double polish_trigger = 1e-4;
  double polish_delta = 1e-7;
  int polish_refine_iter = 8;
  /// Per-check residual trace; null disables it.
  std::ostream* trace = nullptr;
};

template <typename Scalar>
struct QpSolution {
  Vector<Scalar> x;
  Vector<Scalar> y;
  Scalar objective = 0;
  Scalar primal_residual = 0;
  Scalar dual_residual = 0;
  QpStatus status = QpStatus::MaxIterations;
  int iterations = 0;
  bool polished = false;
};

namespace detail {

template <typename Scalar>
Vector<Scalar> clamp(const Vector<Scalar>& v, const Vector<Scalar>& l,
                     const Vector<Scalar>& u) {
  return v.cwiseMax(l).cwiseMin(u);
}

template <typename Scalar>
struct Residuals {
  Scalar prim = 0;
  Scalar dual = 0;
  Scalar eps_prim = 0;
  Scalar eps_dual = 0;
  Scalar prim_scale = 0;
  Scalar dual_scale = 0;

  bool converged() const { return prim <= eps_prim && dual <= eps_dual; }
};

template <typename Scalar>
Residuals<Scalar> residuals(const QpProblem<Scalar>& prob, const Vector<Scalar>& x,
                            const Vector<Scalar>& z, const Vector<Scalar>& y,
                            const ToleranceConfig& tol) {
  const Vector<Scalar> ax = prob.A * x;
  const Vector<Scalar> px = prob.P * x;
  const Vector<Scalar> aty = prob.A.transpose() * y;
  Residuals<Scalar> r;
  r.prim = ax.size() ? (ax - z).cwiseAbs().maxCoeff() : Scalar(0);
  r.dual = (px + prob.q + aty).cwiseAbs().maxCoeff();
  r.prim_scale = ax.size() ? std::max(ax.cwiseAbs().maxCoeff(), z.cwiseAbs().maxCoeff())
                           : Scalar(0);
  r.dual_scale = std::max({px.cwiseAbs().maxCoeff(),
                           aty.size() ? aty.cwiseAbs().maxCoeff() : Scalar(0),
                           prob.q.cwiseAbs().maxCoeff()});
  r.eps_prim = Scalar(tol.eps_abs) + Scalar(tol.eps_rel) * r.prim_scale;
  r.eps_dual = Scalar(tol.eps_abs) + Scalar(tol.eps_rel) * r.dual_scale;
  return r;
}

template <typename Scalar>
Vector<Scalar> step_sizes(const QpProblem<Scalar>& prob, Scalar rho) {
  const Index k = prob.num_constraints();
  Vector<Scalar> r(k);
  for (Index i = 0; i < k; ++i) {
    const bool lower_inf = prob.l(i) <= Scalar(-kInfinity);
    const bool upper_inf = prob.u(i) >= Scalar(kInfinity);
    if (lower_inf && upper_inf)
      r(i) = Scalar(1e-6);
    else if (prob.u(i) - prob.l(i) <= Scalar(1e-12) * std::max(Scalar(1), std::abs(prob.l(i))))
      r(i) = Scalar(1e3) * rho;
    else
      r(i) = rho;
  }
  return r;
}

template <typename Scalar>
Eigen::LLT<Matrix<Scalar>> factor_admm(const QpProblem<Scalar>& prob,
                                       const Vector<Scalar>& rho, Scalar sigma) {
  Matrix<Scalar> m = prob.P;
  m.diagonal().array() += sigma;
  const SparseRows<Scalar> ra = rho.asDiagonal() * prob.A;
  const Eigen::SparseMatrix<Scalar> atra = prob.A.transpose() * ra;
  m += Matrix<Scalar>(atra);
  Eigen::LLT<Matrix<Scalar>> llt(m);
  if (llt.info() != Eigen::Success)
    throw Error(ErrorKind::NumericalBreakdown, "ADMM system factorization failed");
  return llt;
}

/// Solves the KKT system of the QP restricted to the guessed active set.
/// Returns nothing when the guess does not produce a KKT point.
template <typename Scalar>
std::optional<QpSolution<Scalar>> polish(const QpProblem<Scalar>& prob,
                                         const Vector<Scalar>& x0,
                                         const Vector<Scalar>& z,
                                         const Vector<Scalar>& y,
                                         const ToleranceConfig& tol) {
  const Index m = prob.num_vars();
  const Index k = prob.num_constraints();
  // -1: lower bound active, +1: upper bound active, 0: inactive.
  std::vector<int> side(static_cast<std::size_t>(k), 0);
  std::vector<Index> rows;
  for (Index i = 0; i < k; ++i) {
    if (z(i) - prob.l(i) < -y(i) && prob.l(i) > Scalar(-kInfinity)) {
      side[static_cast<std::size_t>(i)] = -1;
      rows.push_back(i);
    } else if (prob.u(i) - z(i) < y(i) && prob.u(i) < Scalar(kInfinity)) {
      side[static_cast<std::size_t>(i)] = 1;
      rows.push_back(i);
    }
  }
  const Index na = static_cast<Index>(rows.size());
  SparseRows<Scalar> aact(na, m);
  Vector<Scalar> b(na);
  {
    std::vector<Eigen::Triplet<Scalar>> trip;
    for (Index r = 0; r < na; ++r) {
      const Index i = rows[static_cast<std::size_t>(r)];
      for (typename SparseRows<Scalar>::InnerIterator it(prob.A, i); it; ++it)
        trip.emplace_back(r, it.col(), it.value());
      b(r) = side[static_cast<std::size_t>(i)] < 0 ? prob.l(i) : prob.u(i);
    }
    aact.setFromTriplets(trip.begin(), trip.end());
  }

  const Scalar delta = Scalar(tol.polish_delta);
  Matrix<Scalar> kred = prob.P;
  kred.diagonal().array() += delta;
  const Eigen::SparseMatrix<Scalar> ata = aact.transpose() * aact;
  kred += Matrix<Scalar>(ata) / delta;
  Eigen::LLT<Matrix<Scalar>> llt(kred);
  if (llt.info() != Eigen::Success) return std::nullopt;

  // Refinement starts from the ADMM iterate so that directions the active
  // constraints and P leave undetermined keep their ADMM values.
  Vector<Scalar> x = x0;
  Vector<Scalar> ya(na);
  for (Index r = 0; r < na; ++r) ya(r) = y(rows[static_cast<std::size_t>(r)]);
  for (int it = 0; it <= tol.polish_refine_iter; ++it) {
    const Vector<Scalar> r1 = -prob.q - prob.P * x - aact.transpose() * ya;
    const Vector<Scalar> r2 = b - aact * x;
    const Vector<Scalar> dx = llt.solve(r1 + aact.transpose() * r2 / delta);
    const Vector<Scalar> dy = (aact * dx - r2) / delta;
    x += dx;
    ya += dy;
    if (!x.allFinite()) return std::nullopt;
  }

  Vector<Scalar> yfull = Vector<Scalar>::Zero(k);
  for (Index r = 0; r < na; ++r) yfull(rows[static_cast<std::size_t>(r)]) = ya(r);
  const Vector<Scalar> ax = prob.A * x;
  const Vector<Scalar> zp = clamp<Scalar>(ax, prob.l, prob.u);
  const auto res = residuals(prob, x, zp, yfull, tol);
  if (tol.trace) *tol.trace << "polish rows " << na << " prim " << res.prim << " dual " << res.dual << "\n";
  if (!res.converged()) return std::nullopt;
  for (Index r = 0; r < na; ++r) {
    const Index i = rows[static_cast<std::size_t>(r)];
    const bool equality = prob.u(i) - prob.l(i) <= Scalar(0);
    if (equality) continue;
    const Scalar yi = yfull(i);
    if (side[static_cast<std::size_t>(i)] < 0 && yi > res.eps_dual) return std::nullopt;
    if (side[static_cast<std::size_t>(i)] > 0 && yi < -res.eps_dual) return std::nullopt;
  }

  QpSolution<Scalar> sol;
  sol.x = std::move(x);
  sol.y = std::move(yfull);
  sol.objective = Scalar(0.5) * sol.x.dot(prob.P * sol.x) + prob.q.dot(sol.x);
  sol.primal_residual = res.prim;
  sol.dual_residual = res.dual;
  sol.status = QpStatus::Solved;
  sol.polished = true;
  return sol;
}

}  // namespace detail

/// Solves the QP. `warm_x` / `warm_y` seed the primal and dual iterates.
template <typename Scalar>
QpSolution<Scalar> solve_qp(
    const QpProblem<Scalar>& prob,
    const std::type_identity_t<std::optional<Vector<Scalar>>>& warm_x = std::nullopt,
    const ToleranceConfig& tol = {},
    const std::type_identity_t<std::optional<Vector<Scalar>>>& warm_y = std::nullopt) {
  prob.validate();
  const Index m = prob.num_vars();
  const Index k = prob.num_constraints();
  const Scalar sigma = Scalar(tol.sigma);
  const Scalar alpha = Scalar(tol.alpha);

  Scalar rho_base = Scalar(tol.rho);
  Vector<Scalar> rho = detail::step_sizes(prob, rho_base);
  auto llt = detail::factor_admm(prob, rho, sigma);

  Vector<Scalar> x = Vector<Scalar>::Zero(m);
  if (warm_x) {
    if (warm_x->size() != m)
      throw Error(ErrorKind::DimensionMismatch, "warm start has wrong length");
    x = *warm_x;
  }
  Vector<Scalar> z = detail::clamp<Scalar>(prob.A * x, prob.l, prob.u);
  Vector<Scalar> y = Vector<Scalar>::Zero(k);
  if (warm_y && warm_y->size() == k) y = *warm_y;
  Vector<Scalar> y_prev = y;

  int next_polish = 0;
  int polish_attempts = 0;

  QpSolution<Scalar> best;
  for (int it = 1; it <= tol.max_iter; ++it) {
    const bool check = it % tol.check_interval == 0 || it == tol.max_iter;
    if (check) y_prev = y;

    const Vector<Scalar> rhs =
        sigma * x - prob.q + prob.A.transpose() * (rho.cwiseProduct(z) - y);
    const Vector<Scalar> xt = llt.solve(rhs);
    const Vector<Scalar> zt = prob.A * xt;
    x = alpha * xt + (Scalar(1) - alpha) * x;
    const Vector<Scalar> zr = alpha * zt + (Scalar(1) - alpha) * z;
    z = detail::clamp<Scalar>(zr + y.cwiseQuotient(rho), prob.l, prob.u);
    y += rho.cwiseProduct(zr - z);

    if (!check) continue;
    if (!x.allFinite() || !y.allFinite())
      throw Error(ErrorKind::NumericalBreakdown, "non-finite ADMM iterate");

    const auto res = detail::residuals(prob, x, z, y, tol);
    if (tol.trace)
      *tol.trace << "iter " << it << " prim " << res.prim << " dual " << res.dual
                 << " rho " << rho_base << '\n';

    if (res.converged()) {
      best.x = x;
      best.y = y;
      best.objective = Scalar(0.5) * x.dot(prob.P * x) + prob.q.dot(x);
      best.primal_residual = res.prim;
      best.dual_residual = res.dual;
      best.status = QpStatus::Solved;
      best.iterations = it;
      if (tol.polish) {
        if (auto pol = detail::polish(prob, x, z, y, tol);
            pol && pol->objective <= best.objective + res.eps_dual) {
          pol->iterations = it;
          return *pol;
        }
      }
      return best;
    }

    // Primal infeasibility certificate from the dual increment.
    if (k > 0) {
      const Vector<Scalar> dy = y - y_prev;
      const Scalar dy_norm = dy.cwiseAbs().maxCoeff();
      if (dy_norm > Scalar(1e-30)) {
        const Scalar eps = Scalar(tol.eps_prim_inf) * dy_norm;
        const Vector<Scalar> atdy = prob.A.transpose() * dy;
        if (atdy.cwiseAbs().maxCoeff() <= eps) {
          Scalar support = 0;
          bool unbounded = false;
          for (Index i = 0; i < k; ++i) {
            if (dy(i) > eps) {
              if (prob.u(i) >= Scalar(kInfinity)) unbounded = true;
              else support += prob.u(i) * dy(i);
            } else if (dy(i) < -eps) {
              if (prob.l(i) <= Scalar(-kInfinity)) unbounded = true;
              else support += prob.l(i) * dy(i);
            }
          }
          if (!unbounded && support < -eps) {
            best.x = x;
            best.y = dy;
            best.objective = Scalar(0.5) * x.dot(prob.P * x) + prob.q.dot(x);
            best.primal_residual = res.prim;
            best.dual_residual = res.dual;
            best.status = QpStatus::PrimalInfeasible;
            best.iterations = it;
            return best;
          }
        }
      }
    }

    if (tol.polish && it >= next_polish &&
        res.prim <= Scalar(tol.polish_trigger) * (Scalar(1) + res.prim_scale) &&
        res.dual <= Scalar(tol.polish_trigger) * (Scalar(1) + res.dual_scale)) {
      if (auto pol = detail::polish(prob, x, z, y, tol)) {
        pol->iterations = it;
        return *pol;
      }
      ++polish_attempts;
      next_polish = it + 25 * (1 << std::min(polish_attempts, 6));
    }

    if (tol.adaptive_rho_interval > 0 && it % tol.adaptive_rho_interval == 0) {
      const Scalar prim_rel = res.prim / (res.prim_scale + Scalar(1e-30));
      const Scalar dual_rel = res.dual / (res.dual_scale + Scalar(1e-30));
      Scalar new_rho = rho_base * std::sqrt(prim_rel / (dual_rel + Scalar(1e-30)));
      new_rho = std::clamp(new_rho, Scalar(1e-6), Scalar(1e6));
      const Scalar ratio = new_rho / rho_base;
      if (ratio > Scalar(tol.adaptive_rho_tolerance) ||
          ratio < Scalar(1) / Scalar(tol.adaptive_rho_tolerance)) {
        rho_base = new_rho;
        rho = detail::step_sizes(prob, rho_base);
        llt = detail::factor_admm(prob, rho, sigma);
      }
    }
  }

  const auto res = detail::residuals(prob, x, z, y, tol);
  best.x = x;
  best.y = y;
  best.objective = Scalar(0.5) * x.dot(prob.P * x) + prob.q.dot(x);
  best.primal_residual = res.prim;
  best.dual_residual = res.dual;
  best.status = QpStatus::MaxIterations;
  best.iterations = tol.max_iter;
  return best;
}

/// Largest KKT violation of (x, y): stationarity, primal bounds, and dual sign
/// consistency with the bound each multiplier pushes against.
template <typename Scalar>
Scalar kkt_violation(const QpProblem<Scalar>& prob, const Vector<Scalar>& x,
                     const Vector<Scalar>& y) {
  const Vector<Scalar> ax = prob.A * x;
  Scalar v = (prob.P * x + prob.q + prob.A.transpose() * y).cwiseAbs().maxCoeff();
  for (Index i = 0; i < ax.size(); ++i) {
    v = std::max(v, prob.l(i) - ax(i));
    v = std::max(v, ax(i) - prob.u(i));
    // Complementarity: a positive multiplier needs the upper bound tight, a
    // negative one the lower bound.
    if (y(i) > 0 && prob.u(i) < Scalar(kInfinity))
      v = std::max(v, std::min(y(i), prob.u(i) - ax(i)));
    if (y(i) < 0 && prob.l(i) > Scalar(-kInfinity))
      v = std::max(v, std::min(-y(i), ax(i) - prob.l(i)));
  }
  return v;
}

}  // namespace compat::qp
