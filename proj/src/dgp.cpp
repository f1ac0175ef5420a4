#include "orthoml/dgp.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace orthoml {

Rational decimal_to_rational(double x) {
  if (!std::isfinite(x)) throw std::invalid_argument("decimal_to_rational: non-finite value");
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  if (ec != std::errc()) throw std::runtime_error("decimal_to_rational: formatting failed");
  std::string text(buf, end);

  bool negative = false;
  std::size_t i = 0;
  if (text[i] == '-') {
    negative = true;
    ++i;
  }
  boost::multiprecision::cpp_int digits = 0;
  int exponent = 0;
  bool after_point = false;
  for (; i < text.size(); ++i) {
    char c = text[i];
    if (c == '.') {
      after_point = true;
    } else if (c == 'e' || c == 'E') {
      exponent += std::stoi(text.substr(i + 1));
      break;
    } else {
      digits = digits * 10 + (c - '0');
      if (after_point) --exponent;
    }
  }
  boost::multiprecision::cpp_int scale = boost::multiprecision::pow(boost::multiprecision::cpp_int(10),
                                                                    static_cast<unsigned>(std::abs(exponent)));
  Rational value = exponent >= 0 ? Rational(digits * scale) : Rational(digits, scale);
  return negative ? Rational(-value) : value;
}

NoiseDistribution NoiseDistribution::discrete(std::vector<double> support, std::vector<double> probs) {
  if (support.empty() || support.size() != probs.size())
    throw std::invalid_argument("discrete law: support and probs must be nonempty and the same length");
  double total = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0)) throw std::invalid_argument("discrete law: negative probability");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-12) throw std::invalid_argument("discrete law: probabilities must sum to 1");
  for (double v : support)
    if (!std::isfinite(v)) throw std::invalid_argument("discrete law: non-finite support point");

  NoiseDistribution d;
  d.kind_ = NoiseKind::discrete;
  d.support_ = std::move(support);
  d.probs_ = std::move(probs);
  d.cumulative_.resize(d.probs_.size());
  std::partial_sum(d.probs_.begin(), d.probs_.end(), d.cumulative_.begin());
  for (std::size_t k = 0; k < d.support_.size(); ++k) {
    d.exact_support_.push_back(decimal_to_rational(d.support_[k]));
    d.exact_probs_.push_back(decimal_to_rational(d.probs_[k]));
  }
  return d;
}

NoiseDistribution NoiseDistribution::uniform(double half_width) {
  if (!(half_width > 0.0) || !std::isfinite(half_width))
    throw std::invalid_argument("uniform law: half width must be positive");
  NoiseDistribution d;
  d.kind_ = NoiseKind::uniform;
  d.scale_ = half_width;
  return d;
}

NoiseDistribution NoiseDistribution::gaussian(double std_dev) {
  if (!(std_dev > 0.0) || !std::isfinite(std_dev))
    throw std::invalid_argument("gaussian law: std dev must be positive");
  NoiseDistribution d;
  d.kind_ = NoiseKind::gaussian;
  d.scale_ = std_dev;
  return d;
}

double NoiseDistribution::sample(Rng& rng) const {
  switch (kind_) {
    case NoiseKind::discrete: {
      const double u = rng.uniform01();
      auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
      auto k = static_cast<std::size_t>(std::distance(cumulative_.begin(), it));
      return support_[std::min(k, support_.size() - 1)];
    }
    case NoiseKind::uniform:
      return rng.uniform(-scale_, scale_);
    case NoiseKind::gaussian:
      return scale_ * rng.normal();
  }
  return 0.0;
}

NoiseDistribution default_discrete_eta() {
  return NoiseDistribution::discrete({0.5, 0.0, -1.5, -3.5}, {0.65, 0.2, 0.1, 0.05});
}

std::vector<Rational> exact_discrete_moments(const NoiseDistribution& dist, int r_max) {
  if (dist.kind() != NoiseKind::discrete) throw std::invalid_argument("exact_discrete_moments: law is not discrete");
  if (r_max < 1) throw std::invalid_argument("exact_discrete_moments: r_max must be >= 1");
  std::vector<Rational> out(static_cast<std::size_t>(r_max), Rational(0));
  const auto& xs = dist.exact_support();
  const auto& ps = dist.exact_probs();
  for (std::size_t k = 0; k < xs.size(); ++k) {
    Rational power = 1;
    for (int r = 1; r <= r_max; ++r) {
      power *= xs[k];
      out[static_cast<std::size_t>(r - 1)] += ps[k] * power;
    }
  }
  return out;
}

std::vector<double> exact_noise_moments(const NoiseDistribution& dist, int r_max) {
  if (r_max < 1) throw std::invalid_argument("exact_noise_moments: r_max must be >= 1");
  std::vector<double> out(static_cast<std::size_t>(r_max), 0.0);
  switch (dist.kind()) {
    case NoiseKind::discrete: {
      auto exact = exact_discrete_moments(dist, r_max);
      for (int r = 0; r < r_max; ++r) out[static_cast<std::size_t>(r)] = static_cast<double>(exact[static_cast<std::size_t>(r)]);
      break;
    }
    case NoiseKind::uniform:
      // E[U^k] = a^k / (k + 1) for even k.
      for (int r = 2; r <= r_max; r += 2)
        out[static_cast<std::size_t>(r - 1)] = std::pow(dist.half_width(), r) / (r + 1);
      break;
    case NoiseKind::gaussian: {
      // (k-1)!! sigma^k for even k.
      double double_factorial = 1.0;
      for (int r = 2; r <= r_max; r += 2) {
        double_factorial *= (r - 1);
        out[static_cast<std::size_t>(r - 1)] = double_factorial * std::pow(dist.std_dev(), r);
      }
      break;
    }
  }
  return out;
}

void refresh_q0(PLRInstance& instance) { instance.q0 = instance.theta0 * instance.gamma0 + instance.beta0; }

PLRInstance generate_instance(int p, int s, double theta0, const CoefficientLaw& coeff_law,
                              NoiseDistribution eta_dist, NoiseDistribution eps_dist, Rng& rng) {
  if (p < 1 || s < 0 || s > p) throw std::invalid_argument("generate_instance: need 0 <= s <= p and p >= 1");
  if (!(coeff_law.hi >= coeff_law.lo)) throw std::invalid_argument("generate_instance: invalid coefficient law");

  PLRInstance inst;
  inst.theta0 = theta0;
  inst.p = p;
  inst.s = s;
  inst.eta_dist = std::move(eta_dist);
  inst.eps_dist = std::move(eps_dist);

  // Partial Fisher-Yates: the first s slots are a uniform s-subset.
  std::vector<int> idx(static_cast<std::size_t>(p));
  std::iota(idx.begin(), idx.end(), 0);
  for (int k = 0; k < s; ++k) {
    std::uniform_int_distribution<int> pick(k, p - 1);
    std::swap(idx[static_cast<std::size_t>(k)], idx[static_cast<std::size_t>(pick(rng.engine()))]);
  }
  inst.support.assign(idx.begin(), idx.begin() + s);
  std::sort(inst.support.begin(), inst.support.end());

  inst.beta0 = Eigen::VectorXd::Zero(p);
  inst.gamma0 = Eigen::VectorXd::Zero(p);
  for (int j : inst.support) {
    // Zero draws are possible only if lo == 0 and the uniform hits exactly 0;
    // redraw so the support is exact.
    auto draw = [&] {
      double v;
      do v = rng.uniform(coeff_law.lo, coeff_law.hi);
      while (v == 0.0 && coeff_law.hi != coeff_law.lo);
      return v;
    };
    inst.beta0[j] = draw();
    inst.gamma0[j] = draw();
  }
  refresh_q0(inst);
  return inst;
}

Dataset generate_dataset(const PLRInstance& instance, int n, Rng& rng, NoiseDraws& noise) {
  if (n < 1) throw std::invalid_argument("generate_dataset: n must be >= 1");
  const int p = instance.p;
  Dataset data;
  data.X.resize(n, p);
  for (int t = 0; t < n; ++t)
    for (int j = 0; j < p; ++j) data.X(t, j) = rng.normal();
  noise.eta.resize(n);
  noise.eps.resize(n);
  for (int t = 0; t < n; ++t) noise.eta[t] = instance.eta_dist.sample(rng);
  for (int t = 0; t < n; ++t) noise.eps[t] = instance.eps_dist.sample(rng);

  if (instance.s == 0) {
    data.T = noise.eta;
    data.Y = instance.theta0 * data.T + noise.eps;
    return data;
  }
  // Only support columns contribute.
  Eigen::VectorXd g = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd f = Eigen::VectorXd::Zero(n);
  for (int j : instance.support) {
    g.noalias() += instance.gamma0[j] * data.X.col(j);
    f.noalias() += instance.beta0[j] * data.X.col(j);
  }
  data.T = g + noise.eta;
  data.Y = instance.theta0 * data.T + f + noise.eps;
  return data;
}

Dataset generate_dataset(const PLRInstance& instance, int n, Rng& rng) {
  NoiseDraws noise;
  return generate_dataset(instance, n, rng, noise);
}

void Dataset::validate() const {
  if (T.size() != Y.size() || X.rows() != T.size())
    throw std::invalid_argument("dataset: X rows, T and Y lengths must agree");
  if (!X.allFinite() || !T.allFinite() || !Y.allFinite())
    throw std::invalid_argument("dataset: non-finite entries");
}

// ---------------------------------------------------------------------------
// JSON

namespace {

const char* kind_name(NoiseKind k) {
  switch (k) {
    case NoiseKind::discrete: return "discrete";
    case NoiseKind::uniform: return "uniform";
    case NoiseKind::gaussian: return "gaussian";
  }
  return "?";
}

std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

Eigen::VectorXd to_eigen(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

void to_json(nlohmann::json& j, const NoiseDistribution& d) {
  j = nlohmann::json{{"kind", kind_name(d.kind())}};
  switch (d.kind()) {
    case NoiseKind::discrete:
      j["support"] = d.support();
      j["probs"] = d.probs();
      break;
    case NoiseKind::uniform:
      j["half_width"] = d.half_width();
      break;
    case NoiseKind::gaussian:
      j["std_dev"] = d.std_dev();
      break;
  }
}

void from_json(const nlohmann::json& j, NoiseDistribution& d) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "discrete")
    d = NoiseDistribution::discrete(j.at("support").get<std::vector<double>>(), j.at("probs").get<std::vector<double>>());
  else if (kind == "uniform")
    d = NoiseDistribution::uniform(j.at("half_width").get<double>());
  else if (kind == "gaussian")
    d = NoiseDistribution::gaussian(j.at("std_dev").get<double>());
  else
    throw std::invalid_argument("unknown noise kind: " + kind);
}

void to_json(nlohmann::json& j, const PLRInstance& inst) {
  j = nlohmann::json{{"theta0", inst.theta0},   {"beta0", to_std(inst.beta0)}, {"gamma0", to_std(inst.gamma0)},
                     {"q0", to_std(inst.q0)},   {"support", inst.support},     {"eta_dist", inst.eta_dist},
                     {"eps_dist", inst.eps_dist}, {"p", inst.p},               {"s", inst.s}};
}

void from_json(const nlohmann::json& j, PLRInstance& inst) {
  inst.theta0 = j.at("theta0").get<double>();
  inst.beta0 = to_eigen(j.at("beta0").get<std::vector<double>>());
  inst.gamma0 = to_eigen(j.at("gamma0").get<std::vector<double>>());
  inst.q0 = to_eigen(j.at("q0").get<std::vector<double>>());
  inst.support = j.at("support").get<std::vector<int>>();
  inst.eta_dist = j.at("eta_dist").get<NoiseDistribution>();
  inst.eps_dist = j.at("eps_dist").get<NoiseDistribution>();
  inst.p = j.at("p").get<int>();
  inst.s = j.at("s").get<int>();
  if (inst.beta0.size() != inst.p || inst.gamma0.size() != inst.p || inst.q0.size() != inst.p ||
      static_cast<int>(inst.support.size()) != inst.s)
    throw std::invalid_argument("instance json: inconsistent dimensions");
}

void to_json(nlohmann::json& j, const Dataset& data) {
  std::vector<std::vector<double>> rows(static_cast<std::size_t>(data.n()));
  for (int t = 0; t < data.n(); ++t) rows[static_cast<std::size_t>(t)] = to_std(data.X.row(t).transpose());
  j = nlohmann::json{{"n", data.n()}, {"X", rows}, {"T", to_std(data.T)}, {"Y", to_std(data.Y)}};
}

void from_json(const nlohmann::json& j, Dataset& data) {
  const int n = j.at("n").get<int>();
  const auto rows = j.at("X").get<std::vector<std::vector<double>>>();
  if (static_cast<int>(rows.size()) != n) throw std::invalid_argument("dataset json: X row count != n");
  const int p = n > 0 ? static_cast<int>(rows.front().size()) : 0;
  data.X.resize(n, p);
  for (int t = 0; t < n; ++t) {
    if (static_cast<int>(rows[static_cast<std::size_t>(t)].size()) != p)
      throw std::invalid_argument("dataset json: ragged X");
    for (int k = 0; k < p; ++k) data.X(t, k) = rows[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)];
  }
  data.T = to_eigen(j.at("T").get<std::vector<double>>());
  data.Y = to_eigen(j.at("Y").get<std::vector<double>>());
  data.validate();
}

}  // namespace orthoml
