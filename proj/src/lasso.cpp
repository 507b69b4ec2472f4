#include "compatkit/lasso.hpp"

#include "compatkit/rng.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace compat {

double lasso_objective(const Matrix<double>& X, const Vector<double>& y,
                       const Vector<double>& beta, double lambda) {
  const double n = double(X.rows());
  return 0.5 / n * (y - X * beta).squaredNorm() + lambda * beta.lpNorm<1>();
}

LassoFit fit_lasso(const Matrix<double>& X, const Vector<double>& y, double lambda,
                   const LassoOptions& opts, const std::optional<Vector<double>>& warm) {
  const Index n = X.rows();
  const Index p = X.cols();
  if (y.size() != n) throw Error(ErrorKind::DimensionMismatch, "y length differs from rows of X");
  if (n < 1 || p < 1) throw Error(ErrorKind::DimensionMismatch, "empty design");
  if (!(lambda >= 0.0) || !std::isfinite(lambda))
    throw Error(ErrorKind::InvalidConfig, "lambda must be finite and >= 0");
  if (!(opts.tol > 0.0) || opts.max_iter < 1)
    throw Error(ErrorKind::InvalidConfig, "lasso tolerance and iteration cap must be positive");
  if (!X.allFinite() || !y.allFinite())
    throw Error(ErrorKind::NonFiniteInput, "non-finite entry in lasso input");

  LassoFit fit;
  fit.lambda = lambda;
  fit.beta = warm ? *warm : Vector<double>::Zero(p);
  if (fit.beta.size() != p)
    throw Error(ErrorKind::DimensionMismatch, "warm start length differs from p");
  Vector<double> r = y - X * fit.beta;
  const Vector<double> col_sq = X.colwise().squaredNorm().transpose() / double(n);

  const auto update = [&](Index j) {
    if (col_sq(j) == 0.0) {
      const double old = fit.beta(j);
      fit.beta(j) = 0.0;
      return std::abs(old);
    }
    const double old = fit.beta(j);
    const double z = X.col(j).dot(r) / double(n) + col_sq(j) * old;
    const double next = soft_threshold(z, lambda) / col_sq(j);
    if (next != old) {
      r.noalias() -= (next - old) * X.col(j);
      fit.beta(j) = next;
    }
    return std::abs(next - old);
  };

  std::vector<Index> active;
  while (fit.iterations < opts.max_iter) {
    double change = 0.0;
    for (Index j = 0; j < p; ++j) change = std::max(change, update(j));
    ++fit.iterations;
    if (change < opts.tol) {
      fit.converged = true;
      break;
    }
    active.clear();
    for (Index j = 0; j < p; ++j)
      if (fit.beta(j) != 0.0) active.push_back(j);
    while (fit.iterations < opts.max_iter) {
      double inner = 0.0;
      for (Index j : active) inner = std::max(inner, update(j));
      ++fit.iterations;
      if (inner < opts.tol) break;
    }
  }

  for (Index j = 0; j < p; ++j)
    if (fit.beta(j) != 0.0) fit.support.push_back(j);
  fit.objective = lasso_objective(X, y, fit.beta, lambda);
  return fit;
}

double lambda_max(const Matrix<double>& X, const Vector<double>& y) {
  if (y.size() != X.rows())
    throw Error(ErrorKind::DimensionMismatch, "y length differs from rows of X");
  return (X.transpose() * y).cwiseAbs().maxCoeff() / double(X.rows());
}

std::vector<double> lambda_grid(double top, int count, double ratio) {
  if (!(top > 0.0) || count < 1 || !(ratio > 0.0 && ratio <= 1.0))
    throw Error(ErrorKind::InvalidConfig, "lambda grid needs top > 0, count >= 1, ratio in (0, 1]");
  std::vector<double> grid(static_cast<std::size_t>(count));
  if (count == 1) {
    grid[0] = top;
    return grid;
  }
  const double step = std::log(ratio) / double(count - 1);
  for (int k = 0; k < count; ++k) grid[std::size_t(k)] = top * std::exp(step * k);
  return grid;
}

double lambda_bound(double sigma, std::int64_t n, std::int64_t p, double delta) {
  if (!(delta > 0.0 && delta <= 1.0))
    throw Error(ErrorKind::InvalidDelta, "delta must lie in (0, 1]");
  if (!(sigma >= 0.0) || !std::isfinite(sigma))
    throw Error(ErrorKind::InvalidConfig, "sigma must be finite and >= 0");
  if (n < 1 || p < 1) throw Error(ErrorKind::InvalidConfig, "n and p must be positive");
  return 2.0 * sigma * std::sqrt(2.0 / double(n) * (1.0 + std::log(double(p) / delta)));
}

std::vector<int> fold_assignment(Index n, int folds, std::uint64_t seed) {
  if (folds < 2) throw Error(ErrorKind::InvalidConfig, "need at least 2 folds");
  Rng rng(seed);
  const auto order = rng.sample_without_replacement(n, n);
  std::vector<int> label(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < order.size(); ++i)
    label[std::size_t(order[i])] = int(i % std::size_t(folds));
  return label;
}

CvResult cross_validate(const Matrix<double>& X, const Vector<double>& y, int folds,
                        std::vector<double> grid, std::uint64_t seed,
                        const LassoOptions& opts) {
  const Index n = X.rows();
  if (y.size() != n) throw Error(ErrorKind::DimensionMismatch, "y length differs from rows of X");
  const auto label = fold_assignment(n, folds, seed);
  std::vector<std::vector<Index>> train(static_cast<std::size_t>(folds));
  std::vector<std::vector<Index>> valid(static_cast<std::size_t>(folds));
  for (Index i = 0; i < n; ++i)
    for (int f = 0; f < folds; ++f)
      (label[std::size_t(i)] == f ? valid : train)[std::size_t(f)].push_back(i);
  for (int f = 0; f < folds; ++f)
    if (valid[std::size_t(f)].size() < 2 || train[std::size_t(f)].size() < 2)
      throw Error(ErrorKind::DegenerateFold,
                  "fold " + std::to_string(f) + " has fewer than 2 observations");

  if (grid.empty()) grid = lambda_grid(lambda_max(X, (y.array() - y.mean()).matrix()));
  for (double l : grid)
    if (!(l >= 0.0) || !std::isfinite(l))
      throw Error(ErrorKind::InvalidConfig, "lambda grid entries must be finite and >= 0");
  std::sort(grid.begin(), grid.end(), std::greater<>());

  const Index g = Index(grid.size());
  CvResult out;
  out.fold_error.resize(folds, g);
  for (int f = 0; f < folds; ++f) {
    const auto& tr = train[std::size_t(f)];
    const auto& va = valid[std::size_t(f)];
    const auto design = standardize(Matrix<double>(X(tr, Eigen::all)));
    const auto& sc = design.standardization();
    const Vector<double> y_tr = y(tr);
    const double mu = y_tr.mean();
    const Vector<double> y_c = y_tr.array() - mu;
    const Matrix<double> X_va =
        ((X(va, Eigen::all).rowwise() - sc.center.transpose()).array().rowwise() /
         sc.scale.transpose().array())
            .matrix();
    const Vector<double> y_va = y(va);
    std::optional<Vector<double>> warm;
    for (Index k = 0; k < g; ++k) {
      auto fit = fit_lasso(design.values(), y_c, grid[std::size_t(k)], opts, warm);
      out.fold_error(f, k) = ((X_va * fit.beta).array() + mu - y_va.array()).square().mean();
      warm = std::move(fit.beta);
    }
  }
  out.mean_error = out.fold_error.colwise().mean().transpose();
  // Grid is descending, so strict < keeps the larger λ on ties.
  Index best = 0;
  for (Index k = 1; k < g; ++k)
    if (out.mean_error(k) < out.mean_error(best)) best = k;
  out.lambda_cv = grid[std::size_t(best)];
  out.beta_cv = fit_lasso(X, y, out.lambda_cv, opts).beta;
  out.grid = std::move(grid);
  return out;
}

double sigma_sq_unbiased(const Vector<double>& y, const Matrix<double>& X,
                         const Vector<double>& beta_cv, Index s_cv) {
  const Index n = y.size();
  if (X.rows() != n || X.cols() != beta_cv.size())
    throw Error(ErrorKind::DimensionMismatch, "inconsistent shapes for sigma estimate");
  if (n - s_cv - 1 < 1)
    throw Error(ErrorKind::DegreesOfFreedomExhausted,
                "n - s_cv - 1 = " + std::to_string(n - s_cv - 1) + " < 1");
  return (y - X * beta_cv).squaredNorm() / double(n - s_cv - 1);
}

ActiveSetEstimate estimate_active_set(const Matrix<double>& X, const Vector<double>& y,
                                      double delta, int folds, std::uint64_t seed,
                                      const LassoOptions& opts) {
  if (!(delta > 0.0 && delta <= 1.0))
    throw Error(ErrorKind::InvalidDelta, "delta must lie in (0, 1]");
  if (y.squaredNorm() == 0.0) throw Error(ErrorKind::EmptySignal, "response is identically zero");
  auto cv = cross_validate(X, y, folds, {}, seed, opts);
  Index s_cv = 0;
  for (Index j = 0; j < cv.beta_cv.size(); ++j) s_cv += cv.beta_cv(j) != 0.0;
  const double sigma_sq = sigma_sq_unbiased(y, X, cv.beta_cv, s_cv);
  const double lambda_train = lambda_bound(std::sqrt(sigma_sq), X.rows(), X.cols(), delta);
  if (lambda_train == 0.0)
    throw Error(ErrorKind::EmptySignal, "estimated noise is zero; the penalty degenerates");
  auto fit = fit_lasso(X, y, lambda_train, opts);
  if (fit.support.empty())
    throw Error(ErrorKind::EmptySignal, "no coefficient survives the theoretical penalty");
  return {ActiveSet(fit.support, X.cols()), sigma_sq, cv.lambda_cv, lambda_train, s_cv,
          std::move(cv.beta_cv), std::move(fit.beta)};
}

}  // namespace compat
