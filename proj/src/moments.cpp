#include "orthoml/moments.hpp"

#include <string>

namespace orthoml {

void MomentSpec::validate() const {
  if (kind == MomentKind::second_order && r != 2 && r != 3)
    throw std::invalid_argument("moment spec: r must be 2 or 3, got " + std::to_string(r));
  if (!std::isfinite(known_mu_r)) throw std::invalid_argument("moment spec: known E[eta^r] must be finite");
}

void check_non_gaussianity(const MomentSpec& spec, const NoiseDistribution& eta) {
  spec.validate();
  if (spec.kind == MomentKind::first_order) return;
  const auto m = exact_noise_moments(eta, 4);
  const double scale = std::max(1.0, m[3]);
  if (spec.r == 2 && std::abs(m[2]) <= 1e-12 * scale)
    throw std::invalid_argument("r = 2 moment needs a skewed treatment law (E[eta^3] != 0)");
  if (spec.r == 3 && std::abs(m[3] - 3.0 * m[1] * m[1]) <= 1e-12 * scale)
    throw std::invalid_argument("r = 3 moment needs excess kurtosis (E[eta^4] != 3 E[eta^2]^2)");
}

double moment_first_order(double t, double y, double theta, double q, double g) {
  return moment_value(MomentSpec::first_order(), t, y, theta, NuisancePoint{q, g, 0.0, 0.0});
}

double moment_second_order(double t, double y, double theta, const NuisancePoint& np, int r) {
  const auto spec = MomentSpec::second_order(r);
  spec.validate();
  return moment_value(spec, t, y, theta, np);
}

double dtheta_moment(const MomentSpec& spec, double t, double y, double theta, const NuisancePoint& np) {
  (void)y;
  (void)theta;
  const double e = t - np.g;
  return -e * moment_weight(spec, e, np);
}

namespace {

int binomial(int n, int k) {
  int out = 1;
  for (int i = 1; i <= k; ++i) out = out * (n - k + i) / i;
  return out;
}

// D^gamma of u = y - q - theta (t - g).
double du(const MultiIndex& gamma, double u, double theta) {
  const int k = order(gamma);
  if (k == 0) return u;
  if (k > 1 || gamma[2] != 0 || gamma[3] != 0) return 0.0;
  return gamma[0] == 1 ? -1.0 : theta;
}

// D^gamma of the weight, with e = t - g and (a, b) = (mu_{r-1}, mu_r).
double dw(const MomentSpec& spec, const MultiIndex& gamma, double e, double a, double b) {
  if (gamma[0] != 0) return 0.0;
  const int k = gamma[1];
  if (spec.kind == MomentKind::first_order) {
    if (gamma[2] != 0 || gamma[3] != 0) return 0.0;
    if (k == 0) return e;
    return k == 1 ? -1.0 : 0.0;
  }
  const int r = spec.r;
  if (gamma[3] >= 1) return (gamma[3] == 1 && k == 0 && gamma[2] == 0) ? -1.0 : 0.0;
  if (gamma[2] >= 2) return 0.0;
  if (gamma[2] == 1) {
    if (k == 0) return -r * e;
    return k == 1 ? static_cast<double>(r) : 0.0;
  }
  // d^k/dg^k of e^r = (-1)^k r!/(r-k)! e^(r-k).
  double power_term = 0.0;
  if (k <= r) {
    double falling = 1.0;
    for (int i = 0; i < k; ++i) falling *= (r - i);
    power_term = ((k % 2) ? -1.0 : 1.0) * falling * std::pow(e, r - k);
  }
  double linear_term = 0.0;
  if (k == 0) linear_term = r * e * a;
  if (k == 1) linear_term = -r * a;
  return power_term - linear_term - (k == 0 ? b : 0.0);
}

}  // namespace

double dalpha_moment(const MomentSpec& spec, const MultiIndex& alpha, double t, double y, double theta,
                     const NuisancePoint& np) {
  spec.validate();
  for (int a : alpha)
    if (a < 0) throw std::invalid_argument("dalpha_moment: negative multi-index entry");
  if (order(alpha) > 3) throw std::invalid_argument("dalpha_moment: order above 3 is not supported");
  for (int i = spec.nuisance_dims(); i < 4; ++i)
    if (alpha[static_cast<std::size_t>(i)] != 0)
      throw std::invalid_argument("dalpha_moment: spec does not depend on nuisance coordinate " + std::to_string(i));

  const double e = t - np.g;
  const double u = y - np.q - theta * e;
  const double b = spec.mode == MomentMode::known ? spec.known_mu_r : np.mu_r;

  // Leibniz rule over beta <= alpha; u is affine so only |beta| <= 1 matters.
  double total = 0.0;
  MultiIndex beta{};
  for (beta[0] = 0; beta[0] <= std::min(alpha[0], 1); ++beta[0])
    for (beta[1] = 0; beta[1] <= std::min(alpha[1], 1); ++beta[1]) {
      if (order(beta) > 1) continue;
      const double u_part = du(beta, u, theta);
      if (u_part == 0.0) continue;
      MultiIndex rest = alpha;
      rest[0] -= beta[0];
      rest[1] -= beta[1];
      const double coeff = binomial(alpha[0], beta[0]) * binomial(alpha[1], beta[1]);
      total += coeff * u_part * dw(spec, rest, e, np.mu_prev, b);
    }
  return total;
}

ResidualMoments estimate_residual_moments(const Eigen::Ref<const Eigen::VectorXd>& residuals) {
  const auto n = residuals.size();
  if (n == 0) throw std::invalid_argument("estimate_residual_moments: empty sample");
  ResidualMoments out;
  out.mu2 = residuals.squaredNorm() / static_cast<double>(n);
  out.mu3 = (residuals.array().cube() - 3.0 * out.mu2 * residuals.array()).sum() / static_cast<double>(n);
  return out;
}

ResidualMoments estimate_residual_moments(const Eigen::Ref<const Eigen::VectorXd>& T_prime,
                                          const Eigen::Ref<const Eigen::MatrixXd>& X_prime,
                                          const Eigen::Ref<const Eigen::VectorXd>& gamma_hat) {
  if (X_prime.rows() != T_prime.size() || X_prime.cols() != gamma_hat.size())
    throw std::invalid_argument("estimate_residual_moments: dimension mismatch");
  return estimate_residual_moments(T_prime - X_prime * gamma_hat);
}

void set_residual_coordinates(const MomentSpec& spec, double mu2, double mu3, NuisancePoint& np) {
  if (spec.kind == MomentKind::first_order) {
    np.mu_prev = np.mu_r = 0.0;
  } else if (spec.r == 2) {
    np.mu_prev = 0.0;
    np.mu_r = mu2;
  } else {
    np.mu_prev = mu2;
    np.mu_r = mu3;
  }
}

NuisancePoint nuisance_at(const MomentSpec& spec, const NuisanceEstimate& est,
                          const Eigen::Ref<const Eigen::RowVectorXd>& x) {
  NuisancePoint np;
  np.q = x.dot(est.q_hat);
  np.g = x.dot(est.gamma_hat);
  set_residual_coordinates(spec, est.mu2_hat, est.mu3_hat, np);
  return np;
}

}  // namespace orthoml
