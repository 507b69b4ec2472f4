#include <doctest.h>

#include "compatkit/lasso.hpp"
#include "compatkit/sim.hpp"
#include "helpers.hpp"

using namespace compat;
using testing::gaussian;

namespace {

Vector<double> noisy_response(const Matrix<double>& X, std::uint64_t seed, double noise = 0.5) {
  Rng rng(seed);
  Vector<double> beta = Vector<double>::Zero(X.cols());
  for (Index j = 0; j < std::min<Index>(3, X.cols()); ++j) beta(j) = 1.0 + j;
  Vector<double> y = X * beta;
  for (Index i = 0; i < y.size(); ++i) y(i) += noise * rng.normal();
  return y;
}

// Accelerated proximal gradient, run far past convergence.
Vector<double> fista(const Matrix<double>& X, const Vector<double>& y, double lambda) {
  const double n = double(X.rows());
  const Matrix<double> H = X.transpose() * X / n;
  const Vector<double> c = X.transpose() * y / n;
  const double L = Eigen::SelfAdjointEigenSolver<Matrix<double>>(H).eigenvalues().maxCoeff();
  Vector<double> b = Vector<double>::Zero(X.cols()), z = b;
  double t = 1.0;
  for (int it = 0; it < 200000; ++it) {
    const Vector<double> g = H * z - c;
    Vector<double> next = (z - g / L).unaryExpr([&](double u) {
      return soft_threshold(u, lambda / L);
    });
    const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    z = next + ((t - 1.0) / tn) * (next - b);
    b = std::move(next);
    t = tn;
  }
  return b;
}

}  // namespace

TEST_CASE("soft threshold") {
  CHECK(soft_threshold(3.0, 1.0) == 2.0);
  CHECK(soft_threshold(-3.0, 1.0) == -2.0);
  CHECK(soft_threshold(0.5, 1.0) == 0.0);
  CHECK(soft_threshold(-1.0, 1.0) == 0.0);
}

TEST_CASE("penalties at or above lambda_max give the zero solution") {
  const auto X = standardize(gaussian(40, 6, 1)).values();
  Vector<double> y = noisy_response(X, 2);
  y.array() -= y.mean();
  const double top = lambda_max(X, y);
  CHECK(top == doctest::Approx((X.transpose() * y).cwiseAbs().maxCoeff() / 40.0));
  const auto fit = fit_lasso(X, y, top);
  CHECK(fit.beta.isZero(0.0));
  CHECK(fit.support.empty());
  CHECK_FALSE(fit_lasso(X, y, 0.99 * top).support.empty());
}

TEST_CASE("zero penalty recovers least squares") {
  const Matrix<double> X = gaussian(50, 5, 3);
  const Vector<double> y = noisy_response(X, 4);
  const auto fit = fit_lasso(X, y, 0.0, {1e-14, 1'000'000});
  const Vector<double> ls = (X.transpose() * X).ldlt().solve(X.transpose() * y);
  CHECK((fit.beta - ls).cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("orthogonal design has the closed-form soft-threshold solution") {
  Matrix<double> X(4, 3);
  X << 1, 1, 1,
       -1, 1, -1,
       1, -1, -1,
       -1, -1, 1;
  Vector<double> y(4);
  y << 2.0, -1.0, 0.5, 3.0;
  const double lambda = 0.3;
  const auto fit = fit_lasso(X, y, lambda);
  for (Index j = 0; j < 3; ++j) {
    const double expected = soft_threshold(X.col(j).dot(y) / 4.0, lambda);
    CHECK(fit.beta(j) == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("fits satisfy the lasso optimality conditions") {
  for (std::uint64_t seed = 10; seed < 16; ++seed) {
    const auto X = standardize(gaussian(60, 12, seed)).values();
    Vector<double> y = noisy_response(X, seed + 1);
    y.array() -= y.mean();
    const double lambda = 0.1 * lambda_max(X, y);
    const auto fit = fit_lasso(X, y, lambda);
    const double tol = LassoOptions{}.tol;
    REQUIRE(fit.converged);
    const Vector<double> grad = X.transpose() * (y - X * fit.beta) / 60.0;
    for (Index j = 0; j < 12; ++j) {
      if (fit.beta(j) != 0.0)
        CHECK(std::abs(grad(j) - lambda * (fit.beta(j) > 0 ? 1.0 : -1.0)) <= 10 * tol);
      else
        CHECK(std::abs(grad(j)) <= lambda + 10 * tol);
    }
    CHECK(fit.objective == doctest::Approx(lasso_objective(X, y, fit.beta, lambda)));
  }
}

TEST_CASE("coordinate descent agrees with an accelerated proximal-gradient oracle") {
  const auto X = standardize(gaussian(40, 8, 20)).values();
  Vector<double> y = noisy_response(X, 21);
  y.array() -= y.mean();
  for (double frac : {0.5, 0.1, 0.01}) {
    const double lambda = frac * lambda_max(X, y);
    const auto fit = fit_lasso(X, y, lambda);
    CHECK((fit.beta - fista(X, y, lambda)).cwiseAbs().maxCoeff() <= 1e-8);
  }
}

TEST_CASE("the optimal objective decreases along a warm-started path") {
  const auto X = standardize(gaussian(80, 20, 30)).values();
  Vector<double> y = noisy_response(X, 31);
  y.array() -= y.mean();
  const auto grid = lambda_grid(lambda_max(X, y), 30);
  std::optional<Vector<double>> warm;
  double prev = std::numeric_limits<double>::infinity();
  for (double l : grid) {
    auto fit = fit_lasso(X, y, l, {}, warm);
    CHECK(fit.objective <= prev + 1e-12);
    prev = fit.objective;
    warm = fit.beta;
  }
}

TEST_CASE("the lambda grid is log-spaced and descending") {
  const auto g = lambda_grid(2.0);
  REQUIRE(g.size() == 100);
  CHECK(g.front() == doctest::Approx(2.0));
  CHECK(g.back() == doctest::Approx(2e-4));
  for (std::size_t i = 1; i < g.size(); ++i)
    CHECK(g[i] / g[i - 1] == doctest::Approx(std::pow(1e-4, 1.0 / 99)));
}

TEST_CASE("theoretical penalty value and monotonicity") {
  CHECK(lambda_bound(1.0, 100, 20, 0.1) ==
        doctest::Approx(2.0 * std::sqrt(0.02 * (1.0 + std::log(200.0)))));
  CHECK(lambda_bound(2.0, 100, 20, 0.1) == doctest::Approx(2.0 * lambda_bound(1.0, 100, 20, 0.1)));
  CHECK(lambda_bound(1.0, 400, 20, 0.1) < lambda_bound(1.0, 100, 20, 0.1));
  CHECK(lambda_bound(1.0, 100, 200, 0.1) > lambda_bound(1.0, 100, 20, 0.1));
  CHECK(lambda_bound(1.0, 100, 20, 0.01) > lambda_bound(1.0, 100, 20, 0.1));
  CHECK(lambda_bound(0.0, 100, 20, 0.1) == 0.0);
  for (double bad : {0.0, -0.5, 1.5}) {
    try {
      lambda_bound(1.0, 100, 20, bad);
      FAIL("expected InvalidDelta");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::InvalidDelta);
    }
  }
}

TEST_CASE("fold assignment is balanced and seeded") {
  const auto a = fold_assignment(23, 5, 7);
  const auto b = fold_assignment(23, 5, 7);
  CHECK(a == b);
  CHECK(a != fold_assignment(23, 5, 8));
  std::vector<int> count(5, 0);
  for (int f : a) ++count[std::size_t(f)];
  for (int c : count) CHECK((c == 4 || c == 5));
}

TEST_CASE("a singleton grid selects its only value") {
  const Matrix<double> X = gaussian(30, 4, 40);
  const Vector<double> y = noisy_response(X, 41);
  const auto cv = cross_validate(X, y, 5, {0.05}, 1);
  CHECK(cv.lambda_cv == 0.05);
  CHECK(cv.mean_error.size() == 1);
}

TEST_CASE("cross-validation is deterministic for a fixed seed") {
  const Matrix<double> X = gaussian(50, 8, 42);
  const Vector<double> y = noisy_response(X, 43);
  const auto a = cross_validate(X, y, 5, {}, 3);
  const auto b = cross_validate(X, y, 5, {}, 3);
  CHECK(a.lambda_cv == b.lambda_cv);
  CHECK(a.mean_error == b.mean_error);
  CHECK(a.grid.size() == 100);
}

TEST_CASE("cross-validation errors match independent per-fold refits") {
  const Matrix<double> X = gaussian(45, 6, 44) * 3.0 + Matrix<double>::Constant(45, 6, 1.0);
  const Vector<double> y = noisy_response(X, 45).array() + 2.0;
  const std::vector<double> grid{0.5, 0.2, 0.05, 0.01};
  const int folds = 4;
  const auto cv = cross_validate(X, y, folds, grid, 9);
  const auto label = fold_assignment(45, folds, 9);
  for (int f = 0; f < folds; ++f) {
    std::vector<Index> tr, va;
    for (Index i = 0; i < 45; ++i) (label[std::size_t(i)] == f ? va : tr).push_back(i);
    const Matrix<double> Xt = X(tr, Eigen::all);
    const Vector<double> mean = Xt.colwise().mean().transpose();
    const Matrix<double> Xc = Xt.rowwise() - mean.transpose();
    const Vector<double> sd = (Xc.colwise().squaredNorm() / double(tr.size())).cwiseSqrt().transpose();
    const Matrix<double> Xs = Xc.array().rowwise() / sd.transpose().array();
    const double mu = y(tr).mean();
    const Vector<double> yc = y(tr).array() - mu;
    for (std::size_t k = 0; k < grid.size(); ++k) {
      const Vector<double> b = fista(Xs, yc, grid[k]);
      double err = 0.0;
      for (Index i : va) {
        const Vector<double> xi = (X.row(i).transpose() - mean).cwiseQuotient(sd);
        err += std::pow(xi.dot(b) + mu - y(i), 2);
      }
      err /= double(va.size());
      CHECK(std::abs(cv.fold_error(f, Index(k)) - err) <= 1e-8);
    }
  }
  Index best = 0;
  for (Index k = 1; k < 4; ++k)
    if (cv.mean_error(k) < cv.mean_error(best)) best = k;
  CHECK(cv.lambda_cv == grid[std::size_t(best)]);
}

TEST_CASE("noise variance estimate") {
  const Matrix<double> X = Matrix<double>::Zero(11, 2);
  CHECK(sigma_sq_unbiased(Vector<double>::Ones(11), X, Vector<double>::Zero(2), 0) ==
        doctest::Approx(1.1));
  CHECK(sigma_sq_unbiased(Vector<double>::Zero(11), X, Vector<double>::Zero(2), 0) == 0.0);

  const Matrix<double> G = gaussian(20, 3, 50);
  const Vector<double> r = noisy_response(G, 51);
  const Vector<double> b(Vector<double>::LinSpaced(3, 0.1, 0.3));
  CHECK(sigma_sq_unbiased((3.0 * r).eval(), G, (3.0 * b).eval(), 2) ==
        doctest::Approx(9.0 * sigma_sq_unbiased(r, G, b, 2)));
  try {
    sigma_sq_unbiased(r, G, b, 19);
    FAIL("expected DegreesOfFreedomExhausted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::DegreesOfFreedomExhausted);
  }
}

TEST_CASE("too few rows per fold is reported") {
  const Matrix<double> X = gaussian(5, 2, 52);
  const Vector<double> y = noisy_response(X, 53);
  try {
    cross_validate(X, y, 5, {}, 1);
    FAIL("expected DegenerateFold");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::DegenerateFold);
  }
}

TEST_CASE("a zero response has no signal") {
  const auto X = standardize(gaussian(30, 4, 54)).values();
  try {
    estimate_active_set(X, Vector<double>::Zero(30));
    FAIL("expected EmptySignal");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::EmptySignal);
  }
}

TEST_CASE("the estimated active set usually matches the truth on an easy design") {
  int exact = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto data = gen_compound_data(1000, 50, 0.0, 5, 1.0, 2.0, 1.0, seed);
    const Vector<double> y = data.y.array() - data.y.mean();
    const auto est = estimate_active_set(data.X.values(), y, 0.1, 10, seed);
    CHECK(est.beta_train.size() == 50);
    CHECK(est.sigma_sq_hat > 0.0);
    if (est.s_hat.indices() == data.support.indices()) ++exact;
  }
  CHECK(exact > 10);
}
