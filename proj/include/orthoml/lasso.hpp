// lasso.hpp
// L1-penalized least squares by cyclic coordinate descent.
//
// Objective: (1/2n) ||y - X b||^2 + lambda ||b||_1, no intercept.
//
// Two independent kernels solve the same problem:
//   lasso_fit       residual updates, O(n) per coordinate. Used by the
//                   estimator: first-stage fits converge in a few dozen sweeps,
//                   so this beats building X'X.
//   lasso_fit_gram  covariance updates on a prebuilt Gram matrix X'X
//                   (OpenMP-parallel product); O(p) per coordinate change after
//                   an O(n p^2) setup, which pays off for many sweeps or many
//                   responses on one design.
#pragma once

#include <vector>

#include <Eigen/Dense>

namespace orthoml {

struct LassoConfig {
  double lambda = 0.0;
  int max_iters = 10000;  // full sweeps
  double tol = 1e-7;      // max |coefficient change| in a sweep
  bool standardize = false;
  bool record_objective = false;  // fill LassoFit::objective_trace (costs one O(np) pass per sweep)

  void validate() const;
};

struct LassoFit {
  Eigen::VectorXd beta_hat;
  int iterations = 0;
  bool converged = false;
  double objective = 0.0;
  /// Objective before the first sweep and after each sweep, when requested.
  std::vector<double> objective_trace;
};

/// Precomputed sufficient statistics for a fixed design.
struct GramSystem {
  Eigen::MatrixXd gram;  // X'X
  int n = 0;

  static GramSystem from_design(const Eigen::Ref<const Eigen::MatrixXd>& X);
};

double soft_threshold(double z, double t);

double lasso_objective(const Eigen::Ref<const Eigen::MatrixXd>& X, const Eigen::Ref<const Eigen::VectorXd>& y,
                       const Eigen::Ref<const Eigen::VectorXd>& beta, double lambda);

/// Throws std::invalid_argument on dimension mismatch or invalid config.
/// Non-convergence is reported through LassoFit::converged.
LassoFit lasso_fit(const Eigen::Ref<const Eigen::MatrixXd>& X, const Eigen::Ref<const Eigen::VectorXd>& y,
                   const LassoConfig& cfg);

/// Covariance-update kernel on a prebuilt Gram matrix; xty = X'y, yty = y'y.
/// X and y are optional; when given, the final objective and the trace are
/// evaluated from the data instead of the Gram form.
LassoFit lasso_fit_gram(const GramSystem& system, const Eigen::Ref<const Eigen::VectorXd>& xty, double yty,
                        const LassoConfig& cfg, const Eigen::Ref<const Eigen::MatrixXd>& X = Eigen::MatrixXd(),
                        const Eigen::Ref<const Eigen::VectorXd>& y = Eigen::VectorXd());

/// Largest violation of the Lasso optimality conditions at beta.
double kkt_residual(const Eigen::Ref<const Eigen::MatrixXd>& X, const Eigen::Ref<const Eigen::VectorXd>& y,
                    const Eigen::Ref<const Eigen::VectorXd>& beta, double lambda);

/// 2 C M sqrt(3 log(p) / n).
double lambda_theory(double C, double M, double p, int n);
/// sqrt(log(p) / n).
double lambda_experiment(double p, int n);

}  // namespace orthoml
