#pragma once

// Closed-form compatibility values for the compound-symmetry covariance
// Σ_ρ = (1-ρ)I + ρ11ᵀ with the active set taken as S = {0, ..., s-1}.

#include "compatkit/core.hpp"

namespace compat {

template <typename Scalar>
class CompoundSymmetry {
 public:
  CompoundSymmetry(Scalar rho, Index p) : rho_(rho), p_(p) {
    if (!(rho >= Scalar(0) && rho < Scalar(1)))
      throw Error(ErrorKind::InvalidConfig, "rho must lie in [0, 1)");
    if (p < 1) throw Error(ErrorKind::InvalidConfig, "p must be positive");
  }

  Scalar rho() const { return rho_; }
  Index p() const { return p_; }
  Matrix<Scalar> matrix() const { return compound_symmetry<Scalar>(p_, rho_); }
  GramMatrix<Scalar> gram() const { return GramMatrix<Scalar>(matrix()); }

 private:
  Scalar rho_;
  Index p_;
};

enum class BoundKind { Exact, UpperBound };

template <typename Scalar>
struct PopulationBound {
  BoundKind kind;
  Scalar value;  ///< φ² itself (Exact) or an upper bound on it.
  Scalar lower;  ///< 1 - ρ, valid for every s.

  Scalar upper() const { return value; }
  bool exact() const { return kind == BoundKind::Exact; }
};

/// φ² = 1-ρ for even s; φ² ≤ (1-ρ)(1 + 1/(s(p-s))) for odd s.
template <typename Scalar>
PopulationBound<Scalar> population_phi_sq(const CompoundSymmetry<Scalar>& cs, Index s) {
  if (s < 1 || (s % 2 == 1 && s >= cs.p()) || s > cs.p())
    throw Error(ErrorKind::InvalidS, "need 1 <= s <= p, and s < p when s is odd");
  const Scalar base = Scalar(1) - cs.rho();
  if (s % 2 == 0) return {BoundKind::Exact, base, base};
  const Scalar r = Scalar(cs.p() - s);
  return {BoundKind::UpperBound, base * (Scalar(1) + Scalar(1) / (Scalar(s) * r)), base};
}

/// Feasible direction attaining the population value: ±1/s on the active
/// block, and for odd s the entries 1/(s r) on S^c so that Σ_j v_j = 0.
template <typename Scalar>
Vector<Scalar> witness_vector(const CompoundSymmetry<Scalar>& cs, Index s) {
  if (s < 1 || s > cs.p() || (s % 2 == 1 && s >= cs.p()))
    throw Error(ErrorKind::InvalidS, "need 1 <= s <= p, and s < p when s is odd");
  const Index p = cs.p();
  Vector<Scalar> v = Vector<Scalar>::Zero(p);
  const Scalar inv_s = Scalar(1) / Scalar(s);
  const Index plus = s % 2 == 0 ? s / 2 : (s - 1) / 2;
  v.head(plus).setConstant(inv_s);
  v.segment(plus, s - plus).setConstant(-inv_s);
  if (s % 2 == 1) {
    const Index r = p - s;
    v.tail(r).setConstant(Scalar(1) / (Scalar(s) * Scalar(r)));
  }
  return v;
}

template <typename Scalar>
struct QuadFormParts {
  Scalar l2_part;   ///< (1-ρ)‖v‖₂²
  Scalar sum_part;  ///< ρ(1ᵀv)²

  Scalar total() const { return l2_part + sum_part; }
};

/// vᵀΣ_ρv split into its isotropic and all-ones components.
template <typename Scalar, typename Derived>
QuadFormParts<Scalar> quad_form_decomposition(const CompoundSymmetry<Scalar>& cs,
                                              const Eigen::MatrixBase<Derived>& v) {
  if (v.size() != cs.p())
    throw Error(ErrorKind::DimensionMismatch, "vector length differs from p");
  const Scalar sum = v.sum();
  return {(Scalar(1) - cs.rho()) * v.squaredNorm(), cs.rho() * sum * sum};
}

}  // namespace compat
