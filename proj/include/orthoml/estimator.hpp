// estimator.hpp
// Two-stage Z-estimation of theta0 in the partially linear model.
//
// First stage: Lasso fits q_hat (Y on X) and gamma_hat (T on X) on one part of
// the data. Second stage: theta solves the empirical moment equation on
// another part. Every moment here is linear in theta, so the root is
//
//   theta_hat = sum_t (Y_t - <X_t, q_hat>) w_t / sum_t e_t w_t,
//   e_t = T_t - <X_t, gamma_hat>.
//
// Second-order moments need residual moments mu2, mu3 from data that is
// independent of both gamma_hat and the points where theta is solved. Inside
// each evaluation fold we split again into two halves; residual moments from
// one half weight the other, and the roles are swapped (nested cross-fitting).
#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "orthoml/dgp.hpp"
#include "orthoml/lasso.hpp"
#include "orthoml/moments.hpp"
#include "orthoml/rng.hpp"

namespace orthoml {

/// Empirical Jacobian of the moment in theta is numerically zero.
class DegenerateJacobian : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class EstimationMethod { dml_first_order, second_order };
enum class FirstStage { lasso, oracle };

struct LambdaRule {
  enum class Kind { experiment, theory, fixed };
  Kind kind = Kind::experiment;
  double C = 1.0;
  double M = 1.0;
  double value = 0.0;          // fixed
  double outcome_scale = 1.0;  // multiplies lambda for the Y-on-X fit only

  /// Penalty for the treatment regression given the full dataset size.
  double lambda(int p, int n) const;
};

struct EstimatorConfig {
  std::string label;  // empty: derived from method
  EstimationMethod method = EstimationMethod::second_order;
  int r = 3;
  int K = 2;
  LambdaRule lambda_rule;
  MomentMode moment_mode = MomentMode::estimated;
  std::uint64_t seed = 0;
  FirstStage first_stage = FirstStage::lasso;
  int lasso_max_iters = 10000;
  double lasso_tol = 1e-7;
  bool record_fold_indices = false;

  std::string name() const;
  void validate() const;
  /// Moment spec for this config. Known mode reads E[eta^r] from the truth.
  MomentSpec moment_spec(const PLRInstance* truth) const;
};

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  bool contains(double x) const noexcept { return lo <= x && x <= hi; }
};

struct FoldDiagnostics {
  int n_first_stage = 0;
  int n_moment_stage = 0;
  int n_second_stage = 0;
  bool q_converged = true;
  bool gamma_converged = true;
  int q_iterations = 0;
  int gamma_iterations = 0;
  NuisanceDiagnostics nuisance;  // coefficient errors and mean residual-moment errors vs truth
};

/// Index sets used by one evaluation block, when requested.
struct FoldAudit {
  std::vector<int> first_stage;
  std::vector<int> moment_stage;
  std::vector<int> second_stage;
};

struct EstimateReport {
  std::string method;
  double theta_hat = 0.0;
  double se_hat = 0.0;
  Interval ci_95;
  double J_hat = 0.0;
  double V_hat = 0.0;
  double moment_sum = 0.0;  // empirical moment sum at theta_hat
  int n_first_stage = 0;    // summed over folds
  int n_moment_stage = 0;
  int n_second_stage = 0;
  bool lasso_converged = true;
  std::vector<FoldDiagnostics> folds;
  std::vector<FoldAudit> audit;
};

/// Per-point pieces of the moment on second-stage data: m_t = (resid_t -
/// theta e_t) w_t, where resid = Y - <X, q_hat>.
struct MomentContributions {
  std::vector<double> resid;
  std::vector<double> e;
  std::vector<double> w;

  std::size_t size() const noexcept { return e.size(); }
  void append(const MomentContributions& other);
};

MomentContributions moment_contributions(const Eigen::Ref<const Eigen::VectorXd>& T,
                                         const Eigen::Ref<const Eigen::VectorXd>& Y,
                                         const Eigen::Ref<const Eigen::MatrixXd>& X,
                                         const NuisanceEstimate& nuisance, const MomentSpec& spec);

/// Exact root of the empirical moment equation. Throws DegenerateJacobian when
/// |sum e_t w_t| < 1e-10 n.
double solve_theta(const MomentContributions& c);
double solve_theta(const Eigen::Ref<const Eigen::VectorXd>& T, const Eigen::Ref<const Eigen::VectorXd>& Y,
                   const Eigen::Ref<const Eigen::MatrixXd>& X, const NuisanceEstimate& nuisance,
                   const MomentSpec& spec);

struct VarianceEstimate {
  double J_hat = 0.0;
  double V_hat = 0.0;
  double se_hat = 0.0;
  int n = 0;
};

/// J = mean d m / d theta, V = variance of m at theta_hat, se = sqrt(V / J^2 / n).
VarianceEstimate estimate_variance(const MomentContributions& c, double theta_hat);
VarianceEstimate estimate_variance(const Eigen::Ref<const Eigen::VectorXd>& T,
                                   const Eigen::Ref<const Eigen::VectorXd>& Y,
                                   const Eigen::Ref<const Eigen::MatrixXd>& X, double theta_hat,
                                   const NuisanceEstimate& nuisance, const MomentSpec& spec);

/// Sum of the moment over the contributions at theta.
double moment_sum(const MomentContributions& c, double theta);

Interval confidence_interval(const EstimateReport& report, double level);

/// Deterministic shuffle, then round-robin fold labels 0..K-1 (sizes differ by
/// at most one).
std::vector<int> assign_folds(int n, int K, Rng& rng);

/// First stage on half A, second stage on half B. For second-order moments B is
/// split again: residual moments on one quarter, theta on the other.
EstimateReport sample_split_estimate(const Dataset& data, const PLRInstance* truth, const EstimatorConfig& cfg,
                                     Rng& rng);
EstimateReport sample_split_estimate(const Dataset& data, const PLRInstance* truth, const EstimatorConfig& cfg,
                                     const std::vector<int>& first_stage, const std::vector<int>& second_stage);

/// K-fold cross-fitting with the pooled closed-form root.
EstimateReport cross_fit_estimate(const Dataset& data, const PLRInstance* truth, const EstimatorConfig& cfg,
                                  Rng& rng);
EstimateReport cross_fit_estimate(const Dataset& data, const PLRInstance* truth, const EstimatorConfig& cfg,
                                  const std::vector<int>& fold_of);

void to_json(nlohmann::json& j, const EstimatorConfig& cfg);
void from_json(const nlohmann::json& j, EstimatorConfig& cfg);
void to_json(nlohmann::json& j, const EstimateReport& report);

}  // namespace orthoml
