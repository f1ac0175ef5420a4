#include "orthoml/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/math/distributions/normal.hpp>

namespace orthoml {

double LambdaRule::lambda(int p, int n) const {
  switch (kind) {
    case Kind::experiment: return lambda_experiment(p, n);
    case Kind::theory: return lambda_theory(C, M, p, n);
    case Kind::fixed: return value;
  }
  return 0.0;
}

std::string EstimatorConfig::name() const {
  if (!label.empty()) return label;
  return method == EstimationMethod::dml_first_order ? "first_order" : "second_order";
}

void EstimatorConfig::validate() const {
  if (K < 2) throw std::invalid_argument("estimator: K must be >= 2");
  if (method == EstimationMethod::second_order && r != 2 && r != 3)
    throw std::invalid_argument("estimator: r must be 2 or 3");
  if (lambda_rule.kind == LambdaRule::Kind::fixed && !(lambda_rule.value >= 0.0))
    throw std::invalid_argument("estimator: fixed lambda must be >= 0");
  if (!(lambda_rule.outcome_scale > 0.0)) throw std::invalid_argument("estimator: outcome lambda scale must be > 0");
}

MomentSpec EstimatorConfig::moment_spec(const PLRInstance* truth) const {
  if (method == EstimationMethod::dml_first_order) return MomentSpec::first_order();
  if (moment_mode == MomentMode::estimated) return MomentSpec::second_order(r);
  if (truth == nullptr) throw std::invalid_argument("estimator: known-moment mode needs the true treatment law");
  const auto m = exact_noise_moments(truth->eta_dist, r);
  return MomentSpec::second_order_known(r, m[static_cast<std::size_t>(r - 1)]);
}

void MomentContributions::append(const MomentContributions& other) {
  resid.insert(resid.end(), other.resid.begin(), other.resid.end());
  e.insert(e.end(), other.e.begin(), other.e.end());
  w.insert(w.end(), other.w.begin(), other.w.end());
}

MomentContributions moment_contributions(const Eigen::Ref<const Eigen::VectorXd>& T,
                                         const Eigen::Ref<const Eigen::VectorXd>& Y,
                                         const Eigen::Ref<const Eigen::MatrixXd>& X,
                                         const NuisanceEstimate& nuisance, const MomentSpec& spec) {
  const auto n = T.size();
  if (Y.size() != n || X.rows() != n || X.cols() != nuisance.q_hat.size() || X.cols() != nuisance.gamma_hat.size())
    throw std::invalid_argument("moment_contributions: dimension mismatch");
  const Eigen::VectorXd resid = Y - X * nuisance.q_hat;
  const Eigen::VectorXd e = T - X * nuisance.gamma_hat;
  NuisancePoint np;
  set_residual_coordinates(spec, nuisance.mu2_hat, nuisance.mu3_hat, np);

  MomentContributions c;
  c.resid.assign(resid.data(), resid.data() + n);
  c.e.assign(e.data(), e.data() + n);
  c.w.resize(static_cast<std::size_t>(n));
  for (Eigen::Index t = 0; t < n; ++t) c.w[static_cast<std::size_t>(t)] = moment_weight(spec, e[t], np);
  return c;
}

double solve_theta(const MomentContributions& c) {
  const std::size_t n = c.size();
  if (n == 0) throw std::invalid_argument("solve_theta: empty second stage");
  double num = 0.0;
  double den = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    num += c.resid[t] * c.w[t];
    den += c.e[t] * c.w[t];
  }
  if (!(std::abs(den) >= 1e-10 * static_cast<double>(n)))
    throw DegenerateJacobian("degenerate moment Jacobian: |sum e*w| = " + std::to_string(std::abs(den)) +
                             " over " + std::to_string(n) + " points");
  return num / den;
}

double solve_theta(const Eigen::Ref<const Eigen::VectorXd>& T, const Eigen::Ref<const Eigen::VectorXd>& Y,
                   const Eigen::Ref<const Eigen::MatrixXd>& X, const NuisanceEstimate& nuisance,
                   const MomentSpec& spec) {
  return solve_theta(moment_contributions(T, Y, X, nuisance, spec));
}

double moment_sum(const MomentContributions& c, double theta) {
  double total = 0.0;
  for (std::size_t t = 0; t < c.size(); ++t) total += (c.resid[t] - theta * c.e[t]) * c.w[t];
  return total;
}

VarianceEstimate estimate_variance(const MomentContributions& c, double theta_hat) {
  const std::size_t n = c.size();
  if (n == 0) throw std::invalid_argument("estimate_variance: empty second stage");
  const double nd = static_cast<double>(n);
  double j_sum = 0.0;
  double m_sum = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    j_sum += -c.e[t] * c.w[t];
    m_sum += (c.resid[t] - theta_hat * c.e[t]) * c.w[t];
  }
  const double m_mean = m_sum / nd;
  double v_sum = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    const double d = (c.resid[t] - theta_hat * c.e[t]) * c.w[t] - m_mean;
    v_sum += d * d;
  }
  VarianceEstimate out;
  out.n = static_cast<int>(n);
  out.J_hat = j_sum / nd;
  out.V_hat = v_sum / nd;
  if (!(std::abs(out.J_hat) >= 1e-10)) throw DegenerateJacobian("degenerate moment Jacobian in variance estimate");
  out.se_hat = std::sqrt(out.V_hat / (out.J_hat * out.J_hat) / nd);
  return out;
}

VarianceEstimate estimate_variance(const Eigen::Ref<const Eigen::VectorXd>& T,
                                   const Eigen::Ref<const Eigen::VectorXd>& Y,
                                   const Eigen::Ref<const Eigen::MatrixXd>& X, double theta_hat,
                                   const NuisanceEstimate& nuisance, const MomentSpec& spec) {
  return estimate_variance(moment_contributions(T, Y, X, nuisance, spec), theta_hat);
}

Interval confidence_interval(const EstimateReport& report, double level) {
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("confidence_interval: level must be in (0, 1)");
  const boost::math::normal_distribution<double> standard;
  const double z = boost::math::quantile(standard, (1.0 + level) / 2.0);
  return {report.theta_hat - z * report.se_hat, report.theta_hat + z * report.se_hat};
}

std::vector<int> assign_folds(int n, int K, Rng& rng) {
  if (K < 2 || n < K) throw std::invalid_argument("assign_folds: need 2 <= K <= n");
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng.engine());
  std::vector<int> fold_of(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) fold_of[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = i % K;
  return fold_of;
}

// ---------------------------------------------------------------------------

namespace {

struct FirstStageFit {
  NuisanceEstimate nuisance;
  FoldDiagnostics diag;
};

FirstStageFit fit_first_stage(const Dataset& data, const std::vector<int>& idx, const PLRInstance* truth,
                              const EstimatorConfig& cfg) {
  FirstStageFit out;
  out.diag.n_first_stage = static_cast<int>(idx.size());
  if (cfg.first_stage == FirstStage::oracle) {
    if (truth == nullptr) throw std::invalid_argument("estimator: oracle first stage needs the true instance");
    out.nuisance.q_hat = truth->q0;
    out.nuisance.gamma_hat = truth->gamma0;
  } else {
    const Eigen::MatrixXd X = data.X(idx, Eigen::all);
    const Eigen::VectorXd T = data.T(idx);
    const Eigen::VectorXd Y = data.Y(idx);

    LassoConfig lc;
    lc.max_iters = cfg.lasso_max_iters;
    lc.tol = cfg.lasso_tol;
    lc.lambda = cfg.lambda_rule.lambda(data.p(), data.n());
    const LassoFit g_fit = lasso_fit(X, T, lc);
    lc.lambda *= cfg.lambda_rule.outcome_scale;
    const LassoFit q_fit = lasso_fit(X, Y, lc);

    out.nuisance.q_hat = q_fit.beta_hat;
    out.nuisance.gamma_hat = g_fit.beta_hat;
    out.diag.q_converged = q_fit.converged;
    out.diag.gamma_converged = g_fit.converged;
    out.diag.q_iterations = q_fit.iterations;
    out.diag.gamma_iterations = g_fit.iterations;
  }
  if (truth != nullptr) {
    out.diag.nuisance.q_l2_error = (out.nuisance.q_hat - truth->q0).norm();
    out.diag.nuisance.gamma_l2_error = (out.nuisance.gamma_hat - truth->gamma0).norm();
  }
  return out;
}

// Residual moments on `moment_idx`, then contributions on `theta_idx`.
MomentContributions weighted_block(const Dataset& data, NuisanceEstimate nuisance, const MomentSpec& spec,
                                   const std::vector<int>& moment_idx, const std::vector<int>& theta_idx,
                                   const PLRInstance* truth, double& mu2_err, double& mu3_err) {
  const Eigen::MatrixXd Xm = data.X(moment_idx, Eigen::all);
  const ResidualMoments rm = estimate_residual_moments(data.T(moment_idx), Xm, nuisance.gamma_hat);
  nuisance.mu2_hat = rm.mu2;
  nuisance.mu3_hat = rm.mu3;
  if (truth != nullptr) {
    const auto exact = exact_noise_moments(truth->eta_dist, 3);
    mu2_err = rm.mu2 - exact[1];
    mu3_err = rm.mu3 - exact[2];
  }
  const Eigen::MatrixXd Xt = data.X(theta_idx, Eigen::all);
  return moment_contributions(data.T(theta_idx), data.Y(theta_idx), Xt, nuisance, spec);
}

void evaluate_block(const Dataset& data, const FirstStageFit& fs, const MomentSpec& spec,
                    const std::vector<int>& first_idx, const std::vector<int>& eval_idx, bool nested,
                    const PLRInstance* truth, const EstimatorConfig& cfg, MomentContributions& pooled,
                    EstimateReport& report) {
  FoldDiagnostics diag = fs.diag;
  if (spec.kind == MomentKind::first_order) {
    const Eigen::MatrixXd X = data.X(eval_idx, Eigen::all);
    pooled.append(moment_contributions(data.T(eval_idx), data.Y(eval_idx), X, fs.nuisance, spec));
    diag.n_second_stage = static_cast<int>(eval_idx.size());
    if (cfg.record_fold_indices) report.audit.push_back({first_idx, {}, eval_idx});
  } else {
    std::vector<int> half_a, half_b;
    for (std::size_t i = 0; i < eval_idx.size(); ++i) (i % 2 == 0 ? half_a : half_b).push_back(eval_idx[i]);
    if (half_a.empty() || half_b.empty())
      throw std::invalid_argument("estimator: evaluation block too small for the residual-moment split");
    double mu2_err = 0.0, mu3_err = 0.0, mu2_err_swap = 0.0, mu3_err_swap = 0.0;
    pooled.append(weighted_block(data, fs.nuisance, spec, half_a, half_b, truth, mu2_err, mu3_err));
    if (cfg.record_fold_indices) report.audit.push_back({first_idx, half_a, half_b});
    diag.n_moment_stage = static_cast<int>(half_a.size());
    diag.n_second_stage = static_cast<int>(half_b.size());
    if (nested) {
      pooled.append(weighted_block(data, fs.nuisance, spec, half_b, half_a, truth, mu2_err_swap, mu3_err_swap));
      if (cfg.record_fold_indices) report.audit.push_back({first_idx, half_b, half_a});
      diag.n_moment_stage += static_cast<int>(half_b.size());
      diag.n_second_stage += static_cast<int>(half_a.size());
      mu2_err = 0.5 * (mu2_err + mu2_err_swap);
      mu3_err = 0.5 * (mu3_err + mu3_err_swap);
    }
    if (truth != nullptr) {
      diag.nuisance.mu2_error = mu2_err;
      diag.nuisance.mu3_error = mu3_err;
    }
  }
  report.lasso_converged = report.lasso_converged && diag.q_converged && diag.gamma_converged;
  report.n_first_stage += diag.n_first_stage;
  report.n_moment_stage += diag.n_moment_stage;
  report.n_second_stage += diag.n_second_stage;
  report.folds.push_back(diag);
}

void finish_report(const MomentContributions& pooled, EstimateReport& report) {
  report.theta_hat = solve_theta(pooled);
  const VarianceEstimate var = estimate_variance(pooled, report.theta_hat);
  report.J_hat = var.J_hat;
  report.V_hat = var.V_hat;
  report.se_hat = var.se_hat;
  report.moment_sum = moment_sum(pooled, report.theta_hat);
  report.ci_95 = confidence_interval(report, 0.95);
}

void check_dataset(const Dataset& data, const PLRInstance* truth) {
  if (data.X.rows() != data.n() || data.Y.size() != data.n())
    throw std::invalid_argument("estimator: X rows, T and Y lengths must agree");
  if (truth != nullptr && truth->p != data.p()) throw std::invalid_argument("estimator: truth dimension differs from data");
}

}  // namespace

EstimateReport sample_split_estimate(const Dataset& data, const PLRInstance* truth, const EstimatorConfig& cfg,
                                     const std::vector<int>& first_stage, const std::vector<int>& second_stage) {
  cfg.validate();
  check_dataset(data, truth);
  if (first_stage.empty() || second_stage.empty()) throw std::invalid_argument("sample_split_estimate: empty stage");
  const MomentSpec spec = cfg.moment_spec(truth);
  EstimateReport report;
  report.method = cfg.name();
  MomentContributions pooled;
  const FirstStageFit fs = fit_first_stage(data, first_stage, truth, cfg);
  evaluate_block(data, fs, spec, first_stage, second_stage, /*nested=*/false, truth, cfg, pooled, report);
  finish_report(pooled, report);
  return report;
}

EstimateReport sample_split_estimate(const Dataset& data, const PLRInstance* truth, const EstimatorConfig& cfg,
                                     Rng& rng) {
  const int n = data.n();
  if (n < 4) throw std::invalid_argument("sample_split_estimate: need at least 4 observations");
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng.engine());
  const auto half = static_cast<std::ptrdiff_t>(n / 2);
  return sample_split_estimate(data, truth, cfg, std::vector<int>(order.begin(), order.begin() + half),
                               std::vector<int>(order.begin() + half, order.end()));
}

EstimateReport cross_fit_estimate(const Dataset& data, const PLRInstance* truth, const EstimatorConfig& cfg,
                                  const std::vector<int>& fold_of) {
  cfg.validate();
  check_dataset(data, truth);
  if (static_cast<int>(fold_of.size()) != data.n()) throw std::invalid_argument("cross_fit_estimate: fold labels != n");
  const MomentSpec spec = cfg.moment_spec(truth);

  std::vector<std::vector<int>> folds(static_cast<std::size_t>(cfg.K));
  for (int t = 0; t < data.n(); ++t) {
    const int k = fold_of[static_cast<std::size_t>(t)];
    if (k < 0 || k >= cfg.K) throw std::invalid_argument("cross_fit_estimate: fold label out of range");
    folds[static_cast<std::size_t>(k)].push_back(t);
  }

  EstimateReport report;
  report.method = cfg.name();
  MomentContributions pooled;
  for (int k = 0; k < cfg.K; ++k) {
    const auto& eval_idx = folds[static_cast<std::size_t>(k)];
    if (eval_idx.empty()) throw std::invalid_argument("cross_fit_estimate: empty fold");
    std::vector<int> train_idx;
    train_idx.reserve(static_cast<std::size_t>(data.n()) - eval_idx.size());
    for (int t = 0; t < data.n(); ++t)
      if (fold_of[static_cast<std::size_t>(t)] != k) train_idx.push_back(t);
    const FirstStageFit fs = fit_first_stage(data, train_idx, truth, cfg);
    evaluate_block(data, fs, spec, train_idx, eval_idx, /*nested=*/true, truth, cfg, pooled, report);
  }
  finish_report(pooled, report);
  return report;
}

EstimateReport cross_fit_estimate(const Dataset& data, const PLRInstance* truth, const EstimatorConfig& cfg,
                                  Rng& rng) {
  cfg.validate();
  const std::vector<int> fold_of = assign_folds(data.n(), cfg.K, rng);
  return cross_fit_estimate(data, truth, cfg, fold_of);
}

// ---------------------------------------------------------------------------
// JSON

namespace {

const char* method_name(EstimationMethod m) {
  return m == EstimationMethod::dml_first_order ? "dml_first_order" : "second_order";
}

template <class T>
nlohmann::json optional_json(const std::optional<T>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

void to_json(nlohmann::json& j, const EstimatorConfig& cfg) {
  nlohmann::json rule;
  switch (cfg.lambda_rule.kind) {
    case LambdaRule::Kind::experiment: rule = {{"kind", "experiment"}}; break;
    case LambdaRule::Kind::theory: rule = {{"kind", "theory"}, {"C", cfg.lambda_rule.C}, {"M", cfg.lambda_rule.M}}; break;
    case LambdaRule::Kind::fixed: rule = {{"kind", "fixed"}, {"value", cfg.lambda_rule.value}}; break;
  }
  if (cfg.lambda_rule.outcome_scale != 1.0) rule["outcome_scale"] = cfg.lambda_rule.outcome_scale;
  j = nlohmann::json{{"label", cfg.name()},
                     {"method", method_name(cfg.method)},
                     {"r", cfg.r},
                     {"K", cfg.K},
                     {"lambda_rule", rule},
                     {"moment_mode", cfg.moment_mode == MomentMode::known ? "known" : "estimated"},
                     {"first_stage", cfg.first_stage == FirstStage::oracle ? "oracle" : "lasso"},
                     {"seed", cfg.seed}};
}

void from_json(const nlohmann::json& j, EstimatorConfig& cfg) {
  cfg = EstimatorConfig{};
  cfg.label = j.value("label", std::string());
  const auto method = j.value("method", std::string("second_order"));
  if (method == "dml_first_order" || method == "first_order")
    cfg.method = EstimationMethod::dml_first_order;
  else if (method == "second_order")
    cfg.method = EstimationMethod::second_order;
  else
    throw std::invalid_argument("unknown estimation method: " + method);
  cfg.r = j.value("r", 3);
  cfg.K = j.value("K", 2);
  if (j.contains("lambda_rule")) {
    const auto& rule = j.at("lambda_rule");
    const auto kind = rule.value("kind", std::string("experiment"));
    if (kind == "experiment") {
      cfg.lambda_rule.kind = LambdaRule::Kind::experiment;
    } else if (kind == "theory") {
      cfg.lambda_rule.kind = LambdaRule::Kind::theory;
      cfg.lambda_rule.C = rule.value("C", 1.0);
      cfg.lambda_rule.M = rule.value("M", 1.0);
    } else if (kind == "fixed") {
      cfg.lambda_rule.kind = LambdaRule::Kind::fixed;
      cfg.lambda_rule.value = rule.at("value").get<double>();
    } else {
      throw std::invalid_argument("unknown lambda rule: " + kind);
    }
    cfg.lambda_rule.outcome_scale = rule.value("outcome_scale", 1.0);
  }
  const auto mode = j.value("moment_mode", std::string("estimated"));
  if (mode != "known" && mode != "estimated") throw std::invalid_argument("unknown moment mode: " + mode);
  cfg.moment_mode = mode == "known" ? MomentMode::known : MomentMode::estimated;
  const auto first_stage = j.value("first_stage", std::string("lasso"));
  if (first_stage != "lasso" && first_stage != "oracle") throw std::invalid_argument("unknown first stage: " + first_stage);
  cfg.first_stage = first_stage == "oracle" ? FirstStage::oracle : FirstStage::lasso;
  cfg.seed = j.value("seed", std::uint64_t{0});
  cfg.validate();
}

void to_json(nlohmann::json& j, const EstimateReport& report) {
  nlohmann::json folds = nlohmann::json::array();
  for (const auto& f : report.folds) {
    folds.push_back({{"n_first_stage", f.n_first_stage},
                     {"n_moment_stage", f.n_moment_stage},
                     {"n_second_stage", f.n_second_stage},
                     {"q_converged", f.q_converged},
                     {"gamma_converged", f.gamma_converged},
                     {"q_iterations", f.q_iterations},
                     {"gamma_iterations", f.gamma_iterations},
                     {"q_l2_error", optional_json(f.nuisance.q_l2_error)},
                     {"gamma_l2_error", optional_json(f.nuisance.gamma_l2_error)},
                     {"mu2_error", optional_json(f.nuisance.mu2_error)},
                     {"mu3_error", optional_json(f.nuisance.mu3_error)}});
  }
  j = nlohmann::json{{"method", report.method},
                     {"theta_hat", report.theta_hat},
                     {"se_hat", report.se_hat},
                     {"ci_95", {report.ci_95.lo, report.ci_95.hi}},
                     {"J_hat", report.J_hat},
                     {"V_hat", report.V_hat},
                     {"moment_sum", report.moment_sum},
                     {"n_used", {{"first_stage", report.n_first_stage},
                                 {"moment_stage", report.n_moment_stage},
                                 {"second_stage", report.n_second_stage}}},
                     {"lasso_converged", report.lasso_converged},
                     {"folds", folds}};
}

}  // namespace orthoml
