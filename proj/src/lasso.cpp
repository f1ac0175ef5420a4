#include "orthoml/lasso.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace orthoml {

void LassoConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw std::invalid_argument("lasso: lambda must be >= 0");
  if (!(tol > 0.0)) throw std::invalid_argument("lasso: tol must be > 0");
  if (max_iters < 1) throw std::invalid_argument("lasso: max_iters must be >= 1");
}

double soft_threshold(double z, double t) {
  if (z > t) return z - t;
  if (z < -t) return z + t;
  return 0.0;
}

double lasso_objective(const Eigen::Ref<const Eigen::MatrixXd>& X, const Eigen::Ref<const Eigen::VectorXd>& y,
                       const Eigen::Ref<const Eigen::VectorXd>& beta, double lambda) {
  const double n = static_cast<double>(X.rows());
  return (y - X * beta).squaredNorm() / (2.0 * n) + lambda * beta.lpNorm<1>();
}

GramSystem GramSystem::from_design(const Eigen::Ref<const Eigen::MatrixXd>& X) {
  GramSystem sys;
  sys.n = static_cast<int>(X.rows());
  sys.gram = Eigen::MatrixXd::Zero(X.cols(), X.cols());
  sys.gram.selfadjointView<Eigen::Lower>().rankUpdate(X.transpose());
  sys.gram.triangularView<Eigen::StrictlyUpper>() = sys.gram.transpose();
  return sys;
}

namespace {

void check_dims(const Eigen::Ref<const Eigen::MatrixXd>& X, const Eigen::Ref<const Eigen::VectorXd>& y) {
  if (X.rows() < 1 || X.cols() < 1) throw std::invalid_argument("lasso: empty design");
  if (X.rows() != y.size()) throw std::invalid_argument("lasso: X rows and y length differ");
}

// Column scales for standardize: sqrt(||x_j||^2 / n), 1 for zero columns.
Eigen::VectorXd column_scales(const Eigen::VectorXd& gram_diag, int n) {
  Eigen::VectorXd s = (gram_diag.array() / n).sqrt();
  for (Eigen::Index j = 0; j < s.size(); ++j)
    if (!(s[j] > 0.0)) s[j] = 1.0;
  return s;
}

}  // namespace

LassoFit lasso_fit_gram(const GramSystem& system, const Eigen::Ref<const Eigen::VectorXd>& xty, double yty,
                        const LassoConfig& cfg, const Eigen::Ref<const Eigen::MatrixXd>& X,
                        const Eigen::Ref<const Eigen::VectorXd>& y) {
  cfg.validate();
  const Eigen::Index p = system.gram.cols();
  if (system.gram.rows() != p || xty.size() != p) throw std::invalid_argument("lasso: Gram and X'y sizes differ");
  if (system.n < 1) throw std::invalid_argument("lasso: empty design");
  if (cfg.record_objective && (X.rows() != system.n || X.cols() != p || y.size() != system.n))
    throw std::invalid_argument("lasso: objective trace needs the design and response");

  const double n = static_cast<double>(system.n);
  Eigen::VectorXd scale = Eigen::VectorXd::Ones(p);
  if (cfg.standardize) scale = column_scales(system.gram.diagonal(), system.n);

  // Work in scaled coordinates b = scale .* beta.
  auto G = [&](Eigen::Index i, Eigen::Index j) { return system.gram(i, j) / (scale[i] * scale[j]); };
  Eigen::VectorXd c = xty.cwiseQuotient(scale);
  Eigen::VectorXd diag(p);
  for (Eigen::Index j = 0; j < p; ++j) diag[j] = G(j, j) / n;

  LassoFit fit;
  Eigen::VectorXd b = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd gb = Eigen::VectorXd::Zero(p);  // G b
  auto trace = [&] {
    if (cfg.record_objective) fit.objective_trace.push_back(lasso_objective(X, y, b.cwiseQuotient(scale), cfg.lambda));
  };
  trace();

  for (int sweep = 1; sweep <= cfg.max_iters; ++sweep) {
    double max_delta = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) {
      if (!(diag[j] > 0.0)) {
        b[j] = 0.0;
        continue;
      }
      const double rho = (c[j] - gb[j]) / n + diag[j] * b[j];
      const double updated = soft_threshold(rho, cfg.lambda) / diag[j];
      const double delta = updated - b[j];
      if (delta != 0.0) {
        if (cfg.standardize)
          gb.noalias() += (delta / scale[j]) * system.gram.col(j).cwiseQuotient(scale);
        else
          gb.noalias() += delta * system.gram.col(j);
        b[j] = updated;
        max_delta = std::max(max_delta, std::abs(delta / scale[j]));
      }
    }
    fit.iterations = sweep;
    trace();
    if (max_delta < cfg.tol) {
      fit.converged = true;
      break;
    }
  }
  fit.beta_hat = b.cwiseQuotient(scale);
  if (X.rows() == system.n && X.cols() == p && y.size() == system.n)
    fit.objective = lasso_objective(X, y, fit.beta_hat, cfg.lambda);
  else
    fit.objective = (yty - 2.0 * fit.beta_hat.dot(xty) + fit.beta_hat.dot(system.gram * fit.beta_hat)) / (2.0 * n) +
                    cfg.lambda * fit.beta_hat.lpNorm<1>();
  return fit;
}

LassoFit lasso_fit(const Eigen::Ref<const Eigen::MatrixXd>& X, const Eigen::Ref<const Eigen::VectorXd>& y,
                   const LassoConfig& cfg) {
  check_dims(X, y);
  cfg.validate();
  const Eigen::Index p = X.cols();
  const double n = static_cast<double>(X.rows());

  Eigen::VectorXd scale = Eigen::VectorXd::Ones(p);
  if (cfg.standardize) scale = column_scales(X.colwise().squaredNorm().transpose(), static_cast<int>(X.rows()));
  Eigen::VectorXd col_norm(p);
  for (Eigen::Index j = 0; j < p; ++j) col_norm[j] = X.col(j).squaredNorm() / (n * scale[j] * scale[j]);

  LassoFit fit;
  Eigen::VectorXd b = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd resid = y;
  auto trace = [&] {
    if (cfg.record_objective)
      fit.objective_trace.push_back(resid.squaredNorm() / (2.0 * n) + cfg.lambda * b.cwiseQuotient(scale).lpNorm<1>());
  };
  trace();

  for (int sweep = 1; sweep <= cfg.max_iters; ++sweep) {
    double max_delta = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) {
      if (!(col_norm[j] > 0.0)) {
        b[j] = 0.0;
        continue;
      }
      const double rho = X.col(j).dot(resid) / (n * scale[j]) + col_norm[j] * b[j];
      const double updated = soft_threshold(rho, cfg.lambda) / col_norm[j];
      const double delta = updated - b[j];
      if (delta != 0.0) {
        resid.noalias() -= (delta / scale[j]) * X.col(j);
        b[j] = updated;
        max_delta = std::max(max_delta, std::abs(delta / scale[j]));
      }
    }
    fit.iterations = sweep;
    trace();
    if (max_delta < cfg.tol) {
      fit.converged = true;
      break;
    }
  }
  fit.beta_hat = b.cwiseQuotient(scale);
  fit.objective = lasso_objective(X, y, fit.beta_hat, cfg.lambda);
  return fit;
}

double kkt_residual(const Eigen::Ref<const Eigen::MatrixXd>& X, const Eigen::Ref<const Eigen::VectorXd>& y,
                    const Eigen::Ref<const Eigen::VectorXd>& beta, double lambda) {
  check_dims(X, y);
  if (beta.size() != X.cols()) throw std::invalid_argument("kkt_residual: beta length differs from X columns");
  const double n = static_cast<double>(X.rows());
  const Eigen::VectorXd grad = X.transpose() * (y - X * beta) / n;
  double worst = 0.0;
  for (Eigen::Index j = 0; j < beta.size(); ++j) {
    const double v = beta[j] != 0.0 ? std::abs(grad[j] - lambda * (beta[j] > 0 ? 1.0 : -1.0))
                                    : std::max(std::abs(grad[j]) - lambda, 0.0);
    worst = std::max(worst, v);
  }
  return worst;
}

double lambda_theory(double C, double M, double p, int n) {
  if (!(C > 0.0) || !(M > 0.0) || !(p >= 2.0) || n < 1) throw std::invalid_argument("lambda_theory: need C, M > 0, p >= 2, n >= 1");
  return 2.0 * C * M * std::sqrt(3.0 * std::log(p) / n);
}

double lambda_experiment(double p, int n) {
  if (!(p >= 2.0) || n < 1) throw std::invalid_argument("lambda_experiment: need p >= 2, n >= 1");
  return std::sqrt(std::log(p) / n);
}

}  // namespace orthoml
