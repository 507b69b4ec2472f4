#pragma once

#include "compatkit/core.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace compat {

struct LassoOptions {
  double tol = 1e-10;  ///< max absolute coefficient change over a full sweep
  std::int64_t max_iter = 100000;
};

struct LassoFit {
  Vector<double> beta;
  double lambda = 0.0;
  double objective = 0.0;
  std::vector<Index> support;  ///< j with beta_j != 0 exactly
  std::int64_t iterations = 0;
  bool converged = false;
};

/// (1/2n)‖y - Xβ‖² + λ‖β‖₁
double lasso_objective(const Matrix<double>& X, const Vector<double>& y,
                       const Vector<double>& beta, double lambda);

inline double soft_threshold(double z, double t) {
  return z > t ? z - t : (z < -t ? z + t : 0.0);
}

/// Cyclic coordinate descent. Columns need not be standardized; a column of
/// zeros keeps a zero coefficient. Hitting max_iter returns the last iterate
/// with converged = false.
LassoFit fit_lasso(const Matrix<double>& X, const Vector<double>& y, double lambda,
                   const LassoOptions& opts = {},
                   const std::optional<Vector<double>>& warm = std::nullopt);

/// Smallest λ with an all-zero solution: max_j |x_jᵀy| / n.
double lambda_max(const Matrix<double>& X, const Vector<double>& y);

/// `count` log-spaced values from `top` down to ratio·top.
std::vector<double> lambda_grid(double top, int count = 100, double ratio = 1e-4);

/// 2σ √((2/n)(1 + log(p/δ))), the smallest penalty covered by the oracle inequality.
double lambda_bound(double sigma, std::int64_t n, std::int64_t p, double delta);

/// Fold label of each row: a seeded shuffle dealt round-robin into `folds`.
std::vector<int> fold_assignment(Index n, int folds, std::uint64_t seed);

struct CvResult {
  double lambda_cv = 0.0;
  Vector<double> beta_cv;
  std::vector<double> grid;
  Vector<double> mean_error;  ///< per grid point
  Matrix<double> fold_error;  ///< folds × grid validation MSE
};

/// K-fold cross-validation with per-fold restandardization. An empty grid
/// means the default 100-point grid from lambda_max(X, y). Minimum mean error
/// wins; ties go to the larger λ. beta_cv is refit on all rows.
CvResult cross_validate(const Matrix<double>& X, const Vector<double>& y, int folds,
                        std::vector<double> grid, std::uint64_t seed,
                        const LassoOptions& opts = {});

/// ‖y - Xβ‖² / (n - s_cv - 1)
double sigma_sq_unbiased(const Vector<double>& y, const Matrix<double>& X,
                         const Vector<double>& beta_cv, Index s_cv);

struct ActiveSetEstimate {
  ActiveSet s_hat;
  double sigma_sq_hat = 0.0;
  double lambda_cv = 0.0;
  double lambda_train = 0.0;
  Index s_cv = 0;
  Vector<double> beta_cv;
  Vector<double> beta_train;
};

/// CV fit, unbiased noise estimate, theoretical penalty, refit and support.
ActiveSetEstimate estimate_active_set(const Matrix<double>& X, const Vector<double>& y,
                                      double delta = 0.1, int folds = 10,
                                      std::uint64_t seed = 0, const LassoOptions& opts = {});

}  // namespace compat
