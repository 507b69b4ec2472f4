#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace compat {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Eigen::Index;

enum class ErrorKind {
  Usage,
  DimensionMismatch,
  NonFiniteInput,
  ZeroVarianceColumn,
  NotStandardized,
  NotSymmetric,
  NotPsd,
  InvalidActiveSet,
  InvalidSignPattern,
  InvalidConfig,
  InvalidDelta,
  InvalidS,
  Parse,
  Io,
  DegenerateFold,
  DegreesOfFreedomExhausted,
  EmptySignal,
  PrefixTooSmall,
  ActiveSetTooLarge,
  NumericalBreakdown,
  SolverFailure,
  ConditionFails,
};

/// Process exit code associated with an error kind:
/// 1 usage, 2 input/data, 3 solver failure, 4 compatibility condition fails.
int exit_code(ErrorKind kind);
const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

/// Threshold on φ² below which the compatibility condition is declared to fail.
inline constexpr double kEpsilonZero = 1e-6;

/// Scaling applied by standardize(): x_std = (x_raw - center) / scale.
template <typename Scalar>
struct Standardization {
  Vector<Scalar> center;
  Vector<Scalar> scale;
};

/// Column-standardized design: every column has mean 0 and squared norm n.
template <typename Scalar>
class DesignMatrix {
 public:
  /// Wraps a matrix that is already standardized; validates the invariant.
  static DesignMatrix from_standardized(Matrix<Scalar> values,
                                        Scalar tol = Scalar(1e-10));

  const Matrix<Scalar>& values() const { return values_; }
  Index n() const { return values_.rows(); }
  Index p() const { return values_.cols(); }
  const Standardization<Scalar>& standardization() const { return scaling_; }

 private:
  template <typename S, typename D>
  friend DesignMatrix<S> standardize(const Eigen::MatrixBase<D>& raw);

  DesignMatrix(Matrix<Scalar> values, Standardization<Scalar> scaling)
      : values_(std::move(values)), scaling_(std::move(scaling)) {}

  Matrix<Scalar> values_;
  Standardization<Scalar> scaling_;
};

/// Centers each column and scales it to squared norm n.
template <typename Scalar = double, typename Derived>
DesignMatrix<Scalar> standardize(const Eigen::MatrixBase<Derived>& raw) {
  const Index n = raw.rows();
  const Index p = raw.cols();
  if (n < 2 || p < 1)
    throw Error(ErrorKind::DimensionMismatch,
                "design needs n >= 2 rows and p >= 1 columns");
  if (!raw.allFinite())
    throw Error(ErrorKind::NonFiniteInput, "design contains non-finite entries");
  Matrix<Scalar> x = raw.template cast<Scalar>();
  Standardization<Scalar> sc{Vector<Scalar>(p), Vector<Scalar>(p)};
  for (Index j = 0; j < p; ++j) {
    const Scalar mean = x.col(j).mean();
    x.col(j).array() -= mean;
    const Scalar norm = x.col(j).norm();
    // A column whose spread is at rounding level of its magnitude is constant.
    const Scalar mag = raw.col(j).template cast<Scalar>().cwiseAbs().maxCoeff();
    if (!(norm > Scalar(64) * std::numeric_limits<Scalar>::epsilon() *
                     std::max(mag, Scalar(1)) * std::sqrt(Scalar(n))))
      throw Error(ErrorKind::ZeroVarianceColumn,
                  "column " + std::to_string(j) + " has zero variance");
    const Scalar scale = norm / std::sqrt(Scalar(n));
    x.col(j) /= scale;
    sc.center(j) = mean;
    sc.scale(j) = scale;
  }
  return DesignMatrix<Scalar>(std::move(x), std::move(sc));
}

template <typename Scalar>
DesignMatrix<Scalar> DesignMatrix<Scalar>::from_standardized(
    Matrix<Scalar> values, Scalar tol) {
  const Index n = values.rows();
  if (n < 2 || values.cols() < 1)
    throw Error(ErrorKind::DimensionMismatch,
                "design needs n >= 2 rows and p >= 1 columns");
  if (!values.allFinite())
    throw Error(ErrorKind::NonFiniteInput, "design contains non-finite entries");
  for (Index j = 0; j < values.cols(); ++j) {
    const Scalar mean = values.col(j).mean();
    const Scalar sq = values.col(j).squaredNorm();
    if (std::abs(mean) > tol || std::abs(sq - Scalar(n)) > tol * Scalar(n))
      throw Error(ErrorKind::NotStandardized,
                  "column " + std::to_string(j) + " is not standardized");
  }
  Standardization<Scalar> sc{Vector<Scalar>::Zero(values.cols()),
                             Vector<Scalar>::Ones(values.cols())};
  return DesignMatrix(std::move(values), std::move(sc));
}

/// Symmetric positive semidefinite p x p matrix over which the compatibility
/// quadratic form is evaluated.
template <typename Scalar>
class GramMatrix {
 public:
  static constexpr double kSymmetryTol = 1e-12;
  static constexpr double kPsdTol = -1e-10;

  /// Accepts any symmetric PSD matrix directly (e.g. a population covariance).
  explicit GramMatrix(Matrix<Scalar> values) : values_(std::move(values)) {
    if (values_.rows() != values_.cols() || values_.rows() < 1)
      throw Error(ErrorKind::DimensionMismatch, "Gram matrix must be square");
    if (!values_.allFinite())
      throw Error(ErrorKind::NonFiniteInput, "Gram matrix has non-finite entries");
    if ((values_ - values_.transpose()).cwiseAbs().maxCoeff() > Scalar(kSymmetryTol))
      throw Error(ErrorKind::NotSymmetric, "Gram matrix is not symmetric");
    values_ = (values_ + values_.transpose()) / Scalar(2);
    Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> es(values_,
                                                     Eigen::EigenvaluesOnly);
    min_eigenvalue_ = es.eigenvalues()(0);
    if (min_eigenvalue_ < Scalar(kPsdTol))
      throw Error(ErrorKind::NotPsd,
                  "Gram matrix is not positive semidefinite (min eigenvalue " +
                      std::to_string(double(min_eigenvalue_)) + ")");
  }

  const Matrix<Scalar>& values() const { return values_; }
  Index p() const { return values_.rows(); }
  Scalar min_eigenvalue() const { return min_eigenvalue_; }
  Scalar operator()(Index i, Index j) const { return values_(i, j); }

 private:
  Matrix<Scalar> values_;
  Scalar min_eigenvalue_{};
};

/// Σ̂ = XᵀX / n.
template <typename Scalar>
GramMatrix<Scalar> gram(const DesignMatrix<Scalar>& x) {
  const Index p = x.p();
  Matrix<Scalar> g = Matrix<Scalar>::Zero(p, p);
  g.template selfadjointView<Eigen::Lower>().rankUpdate(x.values().transpose(),
                                                        Scalar(1) / Scalar(x.n()));
  g.template triangularView<Eigen::StrictlyUpper>() = g.transpose().eval();
  return GramMatrix<Scalar>(std::move(g));
}

/// Σ_ρ = (1-ρ)I + ρ11ᵀ.
template <typename Scalar>
Matrix<Scalar> compound_symmetry(Index p, Scalar rho) {
  Matrix<Scalar> m = Matrix<Scalar>::Constant(p, p, rho);
  m.diagonal().setOnes();
  return m;
}

/// Sorted, distinct, 0-based indices of the assumed-nonzero coefficients.
class ActiveSet {
 public:
  ActiveSet(std::vector<Index> indices, Index p);
  static ActiveSet from_one_based(std::span<const long long> indices, Index p);
  /// {0, 1, ..., s-1}
  static ActiveSet leading(Index s, Index p);

  const std::vector<Index>& indices() const { return indices_; }
  const std::vector<Index>& complement() const { return complement_; }
  Index s() const { return static_cast<Index>(indices_.size()); }
  Index p() const { return p_; }
  Index r() const { return p_ - s(); }
  bool contains(Index j) const;
  std::vector<long long> one_based() const;

 private:
  std::vector<Index> indices_;
  std::vector<Index> complement_;
  Index p_;
};

/// Signs z ∈ {±1}^s fixing the orthant of v_S.
class SignPattern {
 public:
  explicit SignPattern(std::vector<int> signs);

  /// Canonical pattern number `k` out of 2^{s-1}: z_0 = +1 and, for j >= 1,
  /// z_j = -1 iff bit (s-1-j) of k is set. Increasing k is lexicographic
  /// order with + before -.
  static SignPattern canonical(Index s, std::uint64_t k);

  const std::vector<int>& signs() const { return signs_; }
  Index size() const { return static_cast<Index>(signs_.size()); }
  int operator[](Index j) const { return signs_[static_cast<std::size_t>(j)]; }
  SignPattern flipped() const;
  bool operator==(const SignPattern&) const = default;

 private:
  std::vector<int> signs_;
};

enum class CompatStatus { Optimal, TimeLimitFeasible, ZeroDetected, Infeasible };
const char* to_string(CompatStatus s);

struct CompatResult {
  double phi_sq = std::numeric_limits<double>::infinity();
  double phi = 0.0;
  Vector<double> minimizer;
  CompatStatus status = CompatStatus::Infeasible;
  double lower_bound = 0.0;
  double wall_time = 0.0;
  std::uint64_t subproblems_solved = 0;
  std::optional<SignPattern> pattern;
};

/// s·vᵀΣ̂v
template <typename Scalar, typename Derived>
Scalar compat_objective(const GramMatrix<Scalar>& g, Index s,
                        const Eigen::MatrixBase<Derived>& v) {
  return Scalar(s) * v.dot(g.values() * v);
}

/// s·vᵀΣ̂v / ‖v_S‖₁², the scale-invariant form of the compatibility ratio.
template <typename Scalar, typename Derived>
Scalar compat_ratio(const GramMatrix<Scalar>& g, const ActiveSet& a,
                    const Eigen::MatrixBase<Derived>& v) {
  Scalar l1 = 0;
  for (Index j : a.indices()) l1 += std::abs(v(j));
  return compat_objective(g, a.s(), v) / (l1 * l1);
}

struct FeasibilityReport {
  double active_l1 = 0.0;
  double inactive_l1 = 0.0;
  bool feasible = false;
};

/// Checks ‖v_S‖₁ = 1 and ‖v_{S^c}‖₁ ≤ 3 up to tol.
template <typename Derived>
FeasibilityReport check_feasible(const ActiveSet& a,
                                 const Eigen::MatrixBase<Derived>& v,
                                 double tol = 1e-6) {
  FeasibilityReport rep;
  for (Index j : a.indices()) rep.active_l1 += std::abs(double(v(j)));
  for (Index j : a.complement()) rep.inactive_l1 += std::abs(double(v(j)));
  rep.feasible = v.size() == a.p() && std::abs(rep.active_l1 - 1.0) <= tol &&
                 rep.inactive_l1 <= 3.0 + tol;
  return rep;
}

}  // namespace compat
