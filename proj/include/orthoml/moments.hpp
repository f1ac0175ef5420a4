// moments.hpp
// Moment functions for the partially linear model and their derivatives.
//
// With e = t - g and u = y - q - theta * e, every moment is u * w where
//   first order:   w = e
//   second order:  w = e^r - mu_r - r * e * mu_{r-1},   r in {2, 3}
// In "known" mode mu_r is the exact constant E[eta^r] carried by the spec and
// is not a nuisance coordinate. Nuisance coordinates, in multi-index order:
// (q, g, mu_{r-1}, mu_r).
#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <stdexcept>

#include <Eigen/Dense>

#include "orthoml/dgp.hpp"

namespace orthoml {

enum class MomentKind { first_order, second_order };
enum class MomentMode { known, estimated };

struct MomentSpec {
  MomentKind kind = MomentKind::second_order;
  int r = 3;
  MomentMode mode = MomentMode::estimated;
  double known_mu_r = 0.0;  // E[eta^r], used only in known mode

  static MomentSpec first_order() { return {MomentKind::first_order, 1, MomentMode::estimated, 0.0}; }
  static MomentSpec second_order(int r) { return {MomentKind::second_order, r, MomentMode::estimated, 0.0}; }
  static MomentSpec second_order_known(int r, double mu_r) { return {MomentKind::second_order, r, MomentMode::known, mu_r}; }

  /// Number of nuisance coordinates the moment depends on: 2, 3 (known) or 4.
  int nuisance_dims() const noexcept {
    if (kind == MomentKind::first_order) return 2;
    return mode == MomentMode::known ? 3 : 4;
  }
  void validate() const;
};

/// Throws std::invalid_argument if the treatment law cannot support the
/// second-order moment: r = 2 needs E[eta^3] != 0, r = 3 needs
/// E[eta^4] != 3 E[eta^2]^2. First-order specs always pass.
void check_non_gaussianity(const MomentSpec& spec, const NoiseDistribution& eta);

template <class S>
struct BasicNuisancePoint {
  S q = 0;
  S g = 0;
  S mu_prev = 0;  // mu_{r-1}
  S mu_r = 0;
};
using NuisancePoint = BasicNuisancePoint<double>;

using MultiIndex = std::array<int, 4>;

inline int order(const MultiIndex& a) noexcept { return a[0] + a[1] + a[2] + a[3]; }

/// Second factor of the moment.
template <class S>
S moment_weight(const MomentSpec& spec, S e, const BasicNuisancePoint<S>& np) {
  if (spec.kind == MomentKind::first_order) return e;
  const S mu_r = spec.mode == MomentMode::known ? static_cast<S>(spec.known_mu_r) : np.mu_r;
  S power = 1;
  for (int k = 0; k < spec.r; ++k) power *= e;
  return power - mu_r - static_cast<S>(spec.r) * e * np.mu_prev;
}

template <class S>
S moment_value(const MomentSpec& spec, S t, S y, S theta, const BasicNuisancePoint<S>& np) {
  const S e = t - np.g;
  return (y - np.q - theta * e) * moment_weight(spec, e, np);
}

/// (y - q - theta (t - g)) (t - g).
double moment_first_order(double t, double y, double theta, double q, double g);

/// (y - q - theta e)(e^r - mu_r - r e mu_{r-1}), r in {2, 3}.
double moment_second_order(double t, double y, double theta, const NuisancePoint& np, int r);

/// d m / d theta = -(t - g) * weight. Moments are linear in theta.
double dtheta_moment(const MomentSpec& spec, double t, double y, double theta, const NuisancePoint& np);

/// Exact mixed partial D^alpha m in the nuisance coordinates, order(alpha) <= 3.
/// Throws std::invalid_argument for negative entries, order > 3, or a
/// coordinate the spec does not depend on.
double dalpha_moment(const MomentSpec& spec, const MultiIndex& alpha, double t, double y, double theta,
                     const NuisancePoint& np);

struct ResidualMoments {
  double mu2 = 0.0;
  double mu3 = 0.0;
};

/// mu2 = mean(eta^2), mu3 = mean(eta^3 - 3 mu2 eta) over the given residuals.
ResidualMoments estimate_residual_moments(const Eigen::Ref<const Eigen::VectorXd>& residuals);

/// Residuals eta_t = T'_t - <X'_t, gamma_hat> on a sample independent of gamma_hat.
ResidualMoments estimate_residual_moments(const Eigen::Ref<const Eigen::VectorXd>& T_prime,
                                          const Eigen::Ref<const Eigen::MatrixXd>& X_prime,
                                          const Eigen::Ref<const Eigen::VectorXd>& gamma_hat);

struct NuisanceDiagnostics {
  std::optional<double> q_l2_error;
  std::optional<double> gamma_l2_error;
  std::optional<double> mu2_error;
  std::optional<double> mu3_error;
};

struct NuisanceEstimate {
  Eigen::VectorXd q_hat;
  Eigen::VectorXd gamma_hat;
  double mu2_hat = 0.0;
  double mu3_hat = 0.0;
  MomentMode mode = MomentMode::estimated;
  NuisanceDiagnostics diagnostics;
};

/// Nuisance values at covariate row x for the given spec: (<x, q_hat>,
/// <x, gamma_hat>, mu_{r-1}, mu_r). For r = 2, mu_{r-1} = E[eta | X] = 0.
NuisancePoint nuisance_at(const MomentSpec& spec, const NuisanceEstimate& est,
                          const Eigen::Ref<const Eigen::RowVectorXd>& x);

/// Scalar nuisance coordinates (mu_{r-1}, mu_r) implied by residual moments.
void set_residual_coordinates(const MomentSpec& spec, double mu2, double mu3, NuisancePoint& np);

}  // namespace orthoml
