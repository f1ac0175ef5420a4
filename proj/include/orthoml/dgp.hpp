// dgp.hpp
// Partially linear regression instances, datasets and the noise laws that
// drive them.
//
//   T = <X, gamma0> + eta
//   Y = theta0 * T + <X, beta0> + eps
//
// X has i.i.d. N(0,1) entries; (eta, eps, X) are mutually independent.
#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>
#include <boost/multiprecision/cpp_int.hpp>

#include "json.hpp"
#include "orthoml/rng.hpp"

namespace orthoml {

using Rational = boost::multiprecision::cpp_rational;

enum class NoiseKind { discrete, uniform, gaussian };

/// Law of a scalar noise variable. Discrete laws keep an exact rational copy of
/// their support and probabilities so moments can be enumerated exactly.
class NoiseDistribution {
 public:
  /// Throws std::invalid_argument if probs are negative, mismatched, or do not
  /// sum to one within 1e-12. The exact copy reads each value through its
  /// shortest round-trip decimal form, so 0.65 becomes 13/20.
  static NoiseDistribution discrete(std::vector<double> support, std::vector<double> probs);
  /// Uniform(-half_width, half_width).
  static NoiseDistribution uniform(double half_width);
  static NoiseDistribution gaussian(double std_dev);

  NoiseKind kind() const noexcept { return kind_; }
  const std::vector<double>& support() const noexcept { return support_; }
  const std::vector<double>& probs() const noexcept { return probs_; }
  const std::vector<Rational>& exact_support() const noexcept { return exact_support_; }
  const std::vector<Rational>& exact_probs() const noexcept { return exact_probs_; }
  double half_width() const noexcept { return scale_; }
  double std_dev() const noexcept { return scale_; }

  double sample(Rng& rng) const;

  friend bool operator==(const NoiseDistribution&, const NoiseDistribution&) = default;

 private:
  NoiseKind kind_ = NoiseKind::gaussian;
  double scale_ = 1.0;
  std::vector<double> support_;
  std::vector<double> probs_;
  std::vector<double> cumulative_;
  std::vector<Rational> exact_support_;
  std::vector<Rational> exact_probs_;
};

/// Four-point price-discount law: {0.5, 0, -1.5, -3.5} w.p. (.65, .2, .1, .05).
NoiseDistribution default_discrete_eta();

/// Shortest round-trip decimal of x as an exact rational.
Rational decimal_to_rational(double x);

/// Exact raw moments E[eta^1..eta^r_max] of a discrete law, in rational
/// arithmetic. Throws for non-discrete laws.
std::vector<Rational> exact_discrete_moments(const NoiseDistribution& dist, int r_max);

/// Raw moments E[eta^1..eta^r_max]: enumeration for discrete laws, closed form
/// for uniform and gaussian.
std::vector<double> exact_noise_moments(const NoiseDistribution& dist, int r_max);

struct CoefficientLaw {
  double lo = 0.0;
  double hi = 5.0;
};

struct PLRInstance {
  double theta0 = 3.0;
  Eigen::VectorXd beta0;
  Eigen::VectorXd gamma0;
  Eigen::VectorXd q0;
  std::vector<int> support;  // sorted ascending
  NoiseDistribution eta_dist;
  NoiseDistribution eps_dist;
  int p = 0;
  int s = 0;
};

/// Support drawn uniformly without replacement; nonzero coefficients of beta0
/// and gamma0 i.i.d. from coeff_law. s = 0 gives an unconfounded instance.
PLRInstance generate_instance(int p, int s, double theta0, const CoefficientLaw& coeff_law,
                              NoiseDistribution eta_dist, NoiseDistribution eps_dist, Rng& rng);

/// Rebuild q0 = theta0 * gamma0 + beta0.
void refresh_q0(PLRInstance& instance);

struct Dataset {
  Eigen::MatrixXd X;  // n x p
  Eigen::VectorXd T;
  Eigen::VectorXd Y;

  int n() const noexcept { return static_cast<int>(T.size()); }
  int p() const noexcept { return static_cast<int>(X.cols()); }
  /// Throws std::invalid_argument on shape mismatch or non-finite entries.
  void validate() const;
};

struct NoiseDraws {
  Eigen::VectorXd eta;
  Eigen::VectorXd eps;
};

Dataset generate_dataset(const PLRInstance& instance, int n, Rng& rng);
/// Same stream as generate_dataset, also returning the noise draws.
Dataset generate_dataset(const PLRInstance& instance, int n, Rng& rng, NoiseDraws& noise);

void to_json(nlohmann::json& j, const NoiseDistribution& d);
void from_json(const nlohmann::json& j, NoiseDistribution& d);
void to_json(nlohmann::json& j, const PLRInstance& inst);
void from_json(const nlohmann::json& j, PLRInstance& inst);
void to_json(nlohmann::json& j, const Dataset& data);
void from_json(const nlohmann::json& j, Dataset& data);

}  // namespace orthoml
