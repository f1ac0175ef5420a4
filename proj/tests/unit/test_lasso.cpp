#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "orthoml/lasso.hpp"
#include "orthoml/rng.hpp"

using namespace orthoml;

namespace {

Eigen::MatrixXd gaussian_design(int n, int p, Rng& rng) {
  Eigen::MatrixXd X(n, p);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < p; ++j) X(i, j) = rng.normal();
  return X;
}

Eigen::VectorXd sparse_beta(int p, int s, Rng& rng) {
  Eigen::VectorXd b = Eigen::VectorXd::Zero(p);
  for (int j = 0; j < s; ++j) b[j] = rng.uniform(0.0, 5.0);
  return b;
}

LassoFit gram_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const LassoConfig& cfg) {
  return lasso_fit_gram(GramSystem::from_design(X), X.transpose() * y, y.squaredNorm(), cfg, X, y);
}

}  // namespace

TEST_CASE("soft threshold") {
  CHECK(soft_threshold(3.0, 1.0) == 2.0);
  CHECK(soft_threshold(-3.0, 1.0) == -2.0);
  CHECK(soft_threshold(0.5, 1.0) == 0.0);
  CHECK(soft_threshold(-1.0, 1.0) == 0.0);
  CHECK(soft_threshold(2.0, 0.0) == 2.0);
}

TEST_CASE("lambda rules") {
  CHECK(lambda_theory(1.0, 1.0, std::exp(3.0), 3) == doctest::Approx(2.0 * std::sqrt(3.0)).epsilon(1e-14));
  CHECK(lambda_experiment(1000.0, 5000) == doctest::Approx(std::sqrt(std::log(1000.0) / 5000.0)).epsilon(1e-15));
  CHECK(lambda_experiment(std::exp(1.0), 1) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(lambda_theory(2.0, 0.5, 200.0, 1000) ==
        doctest::Approx(2.0 * std::sqrt(3.0 * std::log(200.0) / 1000.0)).epsilon(1e-14));
}

TEST_CASE("config validation and shape errors") {
  LassoConfig bad;
  bad.lambda = -1.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  LassoConfig cfg;
  cfg.lambda = 0.1;
  Eigen::MatrixXd X = Eigen::MatrixXd::Ones(5, 2);
  Eigen::VectorXd y = Eigen::VectorXd::Ones(4);
  CHECK_THROWS_AS(lasso_fit(X, y, cfg), std::invalid_argument);
  const GramSystem sys = GramSystem::from_design(X);
  CHECK_THROWS_AS(lasso_fit_gram(sys, Eigen::VectorXd::Ones(3), 1.0, cfg), std::invalid_argument);
}

TEST_CASE("univariate closed form") {
  Rng rng(3);
  const int n = 400;
  Eigen::MatrixXd x = gaussian_design(n, 1, rng);
  x /= std::sqrt(x.squaredNorm() / n);  // (1/n)||x||^2 = 1
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) y[i] = 1.7 * x(i, 0) + rng.normal();
  for (double lambda : {0.0, 0.3, 1.0, 5.0}) {
    LassoConfig cfg;
    cfg.lambda = lambda;
    cfg.tol = 1e-12;
    const double expected = soft_threshold(x.col(0).dot(y) / n, lambda);
    const auto fast = lasso_fit(x, y, cfg);
    const auto gram = gram_fit(x, y, cfg);
    CHECK(fast.beta_hat[0] == doctest::Approx(expected).epsilon(1e-12));
    CHECK(gram.beta_hat[0] == doctest::Approx(expected).epsilon(1e-12));
    CHECK(kkt_residual(x, y, fast.beta_hat, lambda) <= 1e-12);
  }
}

TEST_CASE("penalty above the null threshold gives the zero solution") {
  Rng rng(5);
  const int n = 200, p = 30;
  const auto X = gaussian_design(n, p, rng);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) y[i] = rng.normal();
  const double lmax = (X.transpose() * y).cwiseAbs().maxCoeff() / n;
  LassoConfig cfg;
  cfg.lambda = lmax * 1.0001;
  CHECK(lasso_fit(X, y, cfg).beta_hat.isZero());
  CHECK(gram_fit(X, y, cfg).beta_hat.isZero());
  CHECK(kkt_residual(X, y, Eigen::VectorXd::Zero(p), cfg.lambda) == 0.0);
  cfg.lambda = lmax * 0.99;
  CHECK(!lasso_fit(X, y, cfg).beta_hat.isZero());
}

TEST_CASE("noiseless sparse recovery") {
  Rng rng(7);
  const int n = 2000, p = 50, s = 5;
  const auto X = gaussian_design(n, p, rng);
  const auto beta0 = sparse_beta(p, s, rng);
  const Eigen::VectorXd y = X * beta0;
  LassoConfig cfg;
  cfg.lambda = lambda_experiment(p, n);
  const auto fit = lasso_fit(X, y, cfg);
  CHECK(fit.converged);
  CHECK((fit.beta_hat - beta0).norm() < 0.1);
}

TEST_CASE("converged fits satisfy KKT to tolerance and the kernels agree") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    const int n = 300, p = 80;
    const auto X = gaussian_design(n, p, rng);
    const auto beta0 = sparse_beta(p, 8, rng);
    Eigen::VectorXd y = X * beta0;
    for (int i = 0; i < n; ++i) y[i] += rng.normal();
    LassoConfig cfg;
    cfg.lambda = (seed % 2 == 0) ? lambda_experiment(p, n) : 0.05 * static_cast<double>(seed);
    const auto fast = lasso_fit(X, y, cfg);
    const auto gram = gram_fit(X, y, cfg);
    REQUIRE(fast.converged);
    REQUIRE(gram.converged);
    CHECK(kkt_residual(X, y, fast.beta_hat, cfg.lambda) < 10 * cfg.tol);
    CHECK(kkt_residual(X, y, gram.beta_hat, cfg.lambda) < 10 * cfg.tol);
    CHECK((fast.beta_hat - gram.beta_hat).cwiseAbs().maxCoeff() < 1e-5);
    CHECK(fast.objective == doctest::Approx(lasso_objective(X, y, fast.beta_hat, cfg.lambda)).epsilon(1e-10));
  }
}

TEST_CASE("objective is non-increasing across sweeps") {
  Rng rng(11);
  const int n = 200, p = 150;
  Eigen::MatrixXd X = gaussian_design(n, p, rng);
  // Correlated columns slow the descent down and exercise many sweeps.
  for (int j = 1; j < p; ++j) X.col(j) = 0.7 * X.col(j - 1) + 0.3 * X.col(j);
  const auto beta0 = sparse_beta(p, 20, rng);
  Eigen::VectorXd y = X * beta0;
  for (int i = 0; i < n; ++i) y[i] += rng.normal();
  LassoConfig cfg;
  cfg.lambda = 0.02;
  cfg.tol = 1e-12;
  cfg.record_objective = true;
  for (const auto& fit : {lasso_fit(X, y, cfg), gram_fit(X, y, cfg)}) {
    REQUIRE(fit.objective_trace.size() == static_cast<std::size_t>(fit.iterations) + 1);
    CHECK(fit.iterations > 5);
    for (std::size_t k = 1; k < fit.objective_trace.size(); ++k)
      CHECK(fit.objective_trace[k] <= fit.objective_trace[k - 1] * (1.0 + 1e-14));
  }
}

TEST_CASE("column permutation permutes the solution") {
  Rng rng(13);
  const int n = 250, p = 40;
  const auto X = gaussian_design(n, p, rng);
  const auto beta0 = sparse_beta(p, 6, rng);
  Eigen::VectorXd y = X * beta0;
  for (int i = 0; i < n; ++i) y[i] += 0.5 * rng.normal();
  std::vector<int> perm(p);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng.engine());
  Eigen::MatrixXd Xp(n, p);
  for (int j = 0; j < p; ++j) Xp.col(j) = X.col(perm[static_cast<std::size_t>(j)]);
  LassoConfig cfg;
  cfg.lambda = lambda_experiment(p, n);
  cfg.tol = 1e-12;
  const auto a = lasso_fit(X, y, cfg);
  const auto b = lasso_fit(Xp, y, cfg);
  for (int j = 0; j < p; ++j) CHECK(b.beta_hat[j] == doctest::Approx(a.beta_hat[perm[static_cast<std::size_t>(j)]]).epsilon(1e-8));
}

TEST_CASE("standardization is scale invariant") {
  Rng rng(17);
  const int n = 300, p = 20;
  const auto X = gaussian_design(n, p, rng);
  Eigen::VectorXd scale(p);
  for (int j = 0; j < p; ++j) scale[j] = 0.1 + 3.0 * rng.uniform01();
  const Eigen::MatrixXd Xs = X * scale.asDiagonal();
  const auto beta0 = sparse_beta(p, 4, rng);
  Eigen::VectorXd y = X * beta0;
  for (int i = 0; i < n; ++i) y[i] += rng.normal();
  LassoConfig cfg;
  cfg.lambda = 0.1;
  cfg.tol = 1e-12;
  cfg.standardize = true;
  const auto a = lasso_fit(X, y, cfg);
  const auto b = lasso_fit(Xs, y, cfg);
  const auto c = gram_fit(Xs, y, cfg);
  CHECK((X * a.beta_hat - Xs * b.beta_hat).cwiseAbs().maxCoeff() < 1e-8);
  CHECK((b.beta_hat - c.beta_hat).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("iteration cap reports non-convergence") {
  Rng rng(19);
  const int n = 100, p = 60;
  Eigen::MatrixXd X = gaussian_design(n, p, rng);
  for (int j = 1; j < p; ++j) X.col(j) = 0.9 * X.col(j - 1) + 0.1 * X.col(j);
  Eigen::VectorXd y = X * sparse_beta(p, 10, rng);
  LassoConfig cfg;
  cfg.lambda = 0.01;
  cfg.max_iters = 1;
  const auto fit = lasso_fit(X, y, cfg);
  CHECK(!fit.converged);
  CHECK(fit.iterations == 1);
}
