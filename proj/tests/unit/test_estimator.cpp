#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <set>

#include "orthoml/estimator.hpp"

using namespace orthoml;

namespace {

PLRInstance make_instance(int p, int s, std::uint64_t seed, NoiseDistribution eps = NoiseDistribution::uniform(1.0),
                          NoiseDistribution eta = default_discrete_eta()) {
  Rng rng(seed);
  return generate_instance(p, s, 3.0, {}, std::move(eta), std::move(eps), rng);
}

Dataset make_data(const PLRInstance& inst, int n, std::uint64_t seed) {
  Rng rng(seed);
  return generate_dataset(inst, n, rng);
}

EstimatorConfig method(EstimationMethod m, FirstStage fs = FirstStage::lasso, int K = 2) {
  EstimatorConfig cfg;
  cfg.method = m;
  cfg.first_stage = fs;
  cfg.K = K;
  return cfg;
}

const NoiseDistribution kNoEps = NoiseDistribution::discrete({0.0}, {1.0});

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto k = v.size();
  return k % 2 ? v[k / 2] : 0.5 * (v[k / 2 - 1] + v[k / 2]);
}

}  // namespace

TEST_CASE("solve_theta on hand-built contributions") {
  MomentContributions one;
  one.resid = {5.0};
  one.e = {1.0};
  one.w = {1.0};
  CHECK(solve_theta(one) == 5.0);

  MomentContributions flat;
  flat.resid = {2.0, 2.0, 2.0};
  flat.e = {1.0, 1.0, 1.0};
  flat.w = {1.0, 1.0, 1.0};
  const double theta = solve_theta(flat);
  CHECK(theta == 2.0);
  const auto var = estimate_variance(flat, theta);
  CHECK(var.V_hat == 0.0);
  CHECK(var.se_hat == 0.0);
  CHECK(var.J_hat == -1.0);

  MomentContributions zero;
  zero.resid = {1.0, 2.0};
  zero.e = {0.0, 0.0};
  zero.w = {1.0, -1.0};
  CHECK_THROWS_AS(solve_theta(zero), DegenerateJacobian);
  CHECK_THROWS_AS(estimate_variance(zero, 0.0), DegenerateJacobian);
  CHECK_THROWS_AS(solve_theta(MomentContributions{}), std::invalid_argument);
}

TEST_CASE("confidence intervals") {
  EstimateReport r;
  r.theta_hat = 0.0;
  r.se_hat = 1.0;
  const auto ci = confidence_interval(r, 0.95);
  CHECK(ci.lo == doctest::Approx(-1.959963984540054).epsilon(1e-12));
  CHECK(ci.hi == doctest::Approx(1.959963984540054).epsilon(1e-12));
  r.theta_hat = 3.0;
  r.se_hat = 0.5;
  const auto ci90 = confidence_interval(r, 0.90);
  CHECK(ci90.hi - 3.0 == doctest::Approx(0.5 * 1.6448536269514722).epsilon(1e-12));
  CHECK(ci90.contains(3.0));
  CHECK_THROWS_AS(confidence_interval(r, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(confidence_interval(r, 0.0), std::invalid_argument);
}

TEST_CASE("fold assignment") {
  Rng rng(1);
  const auto folds = assign_folds(103, 4, rng);
  std::vector<int> sizes(4, 0);
  for (int f : folds) sizes[static_cast<std::size_t>(f)]++;
  CHECK(*std::max_element(sizes.begin(), sizes.end()) - *std::min_element(sizes.begin(), sizes.end()) <= 1);
  Rng again(1);
  CHECK(assign_folds(103, 4, again) == folds);
  CHECK_THROWS_AS(assign_folds(3, 4, rng), std::invalid_argument);
  CHECK_THROWS_AS(assign_folds(10, 1, rng), std::invalid_argument);
}

TEST_CASE("exact nuisance and no outcome noise recover theta0 exactly") {
  const auto inst = make_instance(20, 5, 2, kNoEps);
  const auto data = make_data(inst, 400, 3);
  for (auto m : {EstimationMethod::dml_first_order, EstimationMethod::second_order}) {
    for (int K : {2, 3, 5}) {
      Rng rng(4);
      const auto rep = cross_fit_estimate(data, &inst, method(m, FirstStage::oracle, K), rng);
      CHECK(rep.theta_hat == doctest::Approx(3.0).epsilon(1e-12));
    }
    Rng rng(5);
    CHECK(sample_split_estimate(data, &inst, method(m, FirstStage::oracle), rng).theta_hat ==
          doctest::Approx(3.0).epsilon(1e-12));
  }
  NuisanceEstimate exact;
  exact.q_hat = inst.q0;
  exact.gamma_hat = inst.gamma0;
  CHECK(solve_theta(data.T, data.Y, data.X, exact, MomentSpec::first_order()) == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("the reported estimate is an exact root of the pooled moment") {
  const auto inst = make_instance(100, 10, 6);
  for (std::uint64_t rep = 0; rep < 5; ++rep) {
    const auto data = make_data(inst, 1000, 100 + rep);
    for (auto m : {EstimationMethod::dml_first_order, EstimationMethod::second_order}) {
      Rng rng(rep);
      const auto cf = cross_fit_estimate(data, &inst, method(m), rng);
      CHECK(std::abs(cf.moment_sum) < 1e-8 * cf.n_second_stage);
      const auto ss = sample_split_estimate(data, &inst, method(m), rng);
      CHECK(std::abs(ss.moment_sum) < 1e-8 * ss.n_second_stage);
    }
  }
}

TEST_CASE("K = 2 cross-fit is the mediant of the two sample splits") {
  const auto inst = make_instance(60, 10, 7);
  const auto data = make_data(inst, 600, 8);
  Rng rng(9);
  const auto fold_of = assign_folds(data.n(), 2, rng);
  std::vector<int> a, b;
  for (int t = 0; t < data.n(); ++t) (fold_of[static_cast<std::size_t>(t)] == 0 ? a : b).push_back(t);
  const auto cfg = method(EstimationMethod::dml_first_order);
  const double pooled = cross_fit_estimate(data, &inst, cfg, fold_of).theta_hat;
  const double ab = sample_split_estimate(data, &inst, cfg, a, b).theta_hat;
  const double ba = sample_split_estimate(data, &inst, cfg, b, a).theta_hat;
  CHECK(pooled >= std::min(ab, ba) - 1e-12);
  CHECK(pooled <= std::max(ab, ba) + 1e-12);
}

TEST_CASE("first-stage, moment and evaluation indices never overlap") {
  const auto inst = make_instance(30, 5, 10);
  const auto data = make_data(inst, 301, 11);
  for (int K : {2, 3}) {
    auto cfg = method(EstimationMethod::second_order, FirstStage::lasso, K);
    cfg.record_fold_indices = true;
    Rng rng(12);
    const auto rep = cross_fit_estimate(data, &inst, cfg, rng);
    REQUIRE(rep.audit.size() == static_cast<std::size_t>(2 * K));
    std::multiset<int> evaluated;
    for (const auto& blk : rep.audit) {
      std::set<int> fs(blk.first_stage.begin(), blk.first_stage.end());
      std::set<int> ms(blk.moment_stage.begin(), blk.moment_stage.end());
      for (int t : blk.second_stage) {
        CHECK(fs.count(t) == 0);
        CHECK(ms.count(t) == 0);
        evaluated.insert(t);
      }
      for (int t : blk.moment_stage) CHECK(fs.count(t) == 0);
    }
    for (int t = 0; t < data.n(); ++t) CHECK(evaluated.count(t) == 1);
    CHECK(rep.n_second_stage == data.n());
  }
  auto cfg = method(EstimationMethod::second_order);
  cfg.record_fold_indices = true;
  Rng rng(13);
  const auto ss = sample_split_estimate(data, &inst, cfg, rng);
  REQUIRE(ss.audit.size() == 1);
  std::set<int> all;
  for (const auto* v : {&ss.audit[0].first_stage, &ss.audit[0].moment_stage, &ss.audit[0].second_stage})
    for (int t : *v) CHECK(all.insert(t).second);
}

TEST_CASE("translation equivariance with fixed nuisance") {
  auto inst = make_instance(40, 8, 14);
  Rng drng(15);
  NoiseDraws noise;
  const auto data = generate_dataset(inst, 800, drng, noise);
  const double c = 1.75;
  auto shifted_inst = inst;
  shifted_inst.theta0 += c;
  refresh_q0(shifted_inst);
  Dataset shifted = data;
  shifted.Y = data.Y + c * data.T;
  for (auto m : {EstimationMethod::dml_first_order, EstimationMethod::second_order}) {
    Rng r1(16), r2(16);
    const auto cfg = method(m, FirstStage::oracle);
    const double a = cross_fit_estimate(data, &inst, cfg, r1).theta_hat;
    const double b = cross_fit_estimate(shifted, &shifted_inst, cfg, r2).theta_hat;
    CHECK(b - a == doctest::Approx(c).epsilon(1e-10));
  }
}

TEST_CASE("scaling the outcome scales the estimate when the outcome penalty scales with it") {
  const auto inst = make_instance(80, 10, 17);
  const auto data = make_data(inst, 1000, 18);
  const double c = 4.0;
  Dataset scaled = data;
  scaled.Y *= c;
  for (auto m : {EstimationMethod::dml_first_order, EstimationMethod::second_order}) {
    auto cfg = method(m);
    cfg.lasso_tol = 1e-12;
    auto cfg_scaled = cfg;
    cfg_scaled.lambda_rule.outcome_scale = c;
    Rng r1(19), r2(19);
    const double a = cross_fit_estimate(data, nullptr, cfg, r1).theta_hat;
    const double b = cross_fit_estimate(scaled, nullptr, cfg_scaled, r2).theta_hat;
    CHECK(b == doctest::Approx(c * a).epsilon(1e-8));
  }
}

TEST_CASE("plug-in Jacobian at the truth matches the population value") {
  const auto inst = make_instance(5, 5, 20);
  const auto data = make_data(inst, 100000, 21);
  NuisanceEstimate exact;
  exact.q_hat = inst.q0;
  exact.gamma_hat = inst.gamma0;
  exact.mu2_hat = 1.0;
  exact.mu3_hat = -2.4;
  struct Case {
    MomentSpec spec;
    double J;
  };
  for (const auto& c : {Case{MomentSpec::first_order(), -1.0}, Case{MomentSpec::second_order(3), -5.05},
                        Case{MomentSpec::second_order(2), 2.4}}) {
    const auto contrib = moment_contributions(data.T, data.Y, data.X, exact, c.spec);
    const auto var = estimate_variance(contrib, inst.theta0);
    double ss = 0;
    for (std::size_t t = 0; t < contrib.size(); ++t) {
      const double d = -contrib.e[t] * contrib.w[t] - var.J_hat;
      ss += d * d;
    }
    const double se = std::sqrt(ss / contrib.size() / contrib.size());
    CHECK(std::abs(var.J_hat - c.J) <= 4 * se);
  }
}

TEST_CASE("gaussian treatment noise makes the third-order Jacobian vanish") {
  const auto inst = make_instance(5, 5, 22, NoiseDistribution::uniform(1.0), NoiseDistribution::gaussian(1.0));
  const auto data = make_data(inst, 100000, 23);
  NuisanceEstimate exact;
  exact.q_hat = inst.q0;
  exact.gamma_hat = inst.gamma0;
  exact.mu2_hat = 1.0;
  exact.mu3_hat = 0.0;
  const auto contrib = moment_contributions(data.T, data.Y, data.X, exact, MomentSpec::second_order(3));
  double sum = 0, ss = 0;
  for (std::size_t t = 0; t < contrib.size(); ++t) sum += contrib.e[t] * contrib.w[t];
  const double mean = sum / contrib.size();
  for (std::size_t t = 0; t < contrib.size(); ++t) ss += std::pow(contrib.e[t] * contrib.w[t] - mean, 2);
  CHECK(std::abs(mean) <= 4 * std::sqrt(ss / contrib.size() / contrib.size()));
}

TEST_CASE("known and estimated residual moments give matching estimates") {
  const auto inst = make_instance(100, 10, 24);
  int agree = 0;
  const int runs = 10;
  for (int rep = 0; rep < runs; ++rep) {
    const auto data = make_data(inst, 1000, 200 + static_cast<std::uint64_t>(rep));
    auto known = method(EstimationMethod::second_order);
    known.moment_mode = MomentMode::known;
    Rng r1(rep), r2(rep);
    const auto a = cross_fit_estimate(data, &inst, known, r1);
    const auto b = cross_fit_estimate(data, &inst, method(EstimationMethod::second_order), r2);
    agree += std::abs(a.theta_hat - b.theta_hat) <= 3 * std::sqrt(a.se_hat * a.se_hat + b.se_hat * b.se_hat);
  }
  CHECK(agree == runs);
  auto known = method(EstimationMethod::second_order);
  known.moment_mode = MomentMode::known;
  Rng rng(0);
  CHECK_THROWS_AS(cross_fit_estimate(make_data(inst, 100, 1), nullptr, known, rng), std::invalid_argument);
}

TEST_CASE("no confounding: estimates are centred on theta0") {
  const auto inst = make_instance(200, 0, 25);
  auto centred = [&](const EstimatorConfig& cfg, double& mean, double& se) {
    std::vector<double> est;
    for (int rep = 0; rep < 100; ++rep) {
      const auto data = make_data(inst, 2000, 300 + static_cast<std::uint64_t>(rep));
      Rng rng(rep);
      est.push_back(cross_fit_estimate(data, &inst, cfg, rng).theta_hat);
    }
    mean = 0;
    double ss = 0;
    for (double v : est) mean += v;
    mean /= est.size();
    for (double v : est) ss += (v - mean) * (v - mean);
    se = std::sqrt(ss / (est.size() - 1) / est.size());
  };
  double mean = 0, se = 0;
  centred(method(EstimationMethod::second_order), mean, se);
  CHECK(std::abs(mean - 3.0) <= 3 * se);
  centred(method(EstimationMethod::second_order, FirstStage::oracle), mean, se);
  CHECK(std::abs(mean - 3.0) <= 3 * se);
  centred(method(EstimationMethod::dml_first_order, FirstStage::oracle), mean, se);
  CHECK(std::abs(mean - 3.0) <= 3 * se);
  // With a Lasso first stage the first-order moment keeps a positive
  // shrinkage bias even here: the outcome fit is penalized less than
  // theta0 times the treatment fit on spuriously selected columns.
  centred(method(EstimationMethod::dml_first_order), mean, se);
  CHECK(mean - 3.0 > 3 * se);
}

TEST_CASE("cross-fitting does not inflate the spread relative to one sample split") {
  const auto inst = make_instance(200, 20, 26);
  std::vector<double> ratio;
  for (auto m : {EstimationMethod::dml_first_order, EstimationMethod::second_order}) {
    std::vector<double> cf, ss;
    for (int rep = 0; rep < 40; ++rep) {
      const auto data = make_data(inst, 2000, 400 + static_cast<std::uint64_t>(rep));
      Rng r1(rep), r2(rep);
      cf.push_back(cross_fit_estimate(data, &inst, method(m), r1).se_hat);
      ss.push_back(sample_split_estimate(data, &inst, method(m), r2).se_hat);
    }
    CHECK(median(cf) <= median(ss));
  }
}

TEST_CASE("sample-split second-order estimate covers theta0 and first order is biased down") {
  const auto inst = make_instance(200, 40, 27);
  const int runs = 50;
  int covered = 0;
  double first_sum = 0, first_ss = 0;
  for (int rep = 0; rep < runs; ++rep) {
    const auto data = make_data(inst, 2000, 500 + static_cast<std::uint64_t>(rep));
    Rng r1(rep), r2(rep);
    const auto so = sample_split_estimate(data, &inst, method(EstimationMethod::second_order), r1);
    covered += std::abs(so.theta_hat - 3.0) <= 3 * so.se_hat;
    const double fo = sample_split_estimate(data, &inst, method(EstimationMethod::dml_first_order), r2).theta_hat;
    first_sum += fo;
    first_ss += fo * fo;
  }
  const double mean = first_sum / runs;
  const double sd = std::sqrt(first_ss / runs - mean * mean);
  CHECK(covered >= 0.9 * runs);
  CHECK(mean < 3.0 - 3 * sd / std::sqrt(runs));
}

TEST_CASE("full-size configuration, sample split" * doctest::skip()) {
  const auto inst = make_instance(1000, 100, 28);
  const int runs = 50;
  int covered = 0;
  double first_sum = 0, first_ss = 0;
  for (int rep = 0; rep < runs; ++rep) {
    const auto data = make_data(inst, 5000, 600 + static_cast<std::uint64_t>(rep));
    Rng r1(rep), r2(rep);
    const auto so = sample_split_estimate(data, &inst, method(EstimationMethod::second_order), r1);
    covered += std::abs(so.theta_hat - 3.0) <= 3 * so.se_hat;
    const double fo = sample_split_estimate(data, &inst, method(EstimationMethod::dml_first_order), r2).theta_hat;
    first_sum += fo;
    first_ss += fo * fo;
  }
  const double mean = first_sum / runs;
  const double sd = std::sqrt(first_ss / runs - mean * mean);
  MESSAGE("second-order covered " << covered << "/" << runs << ", first-order mean " << mean);
  CHECK(covered >= 0.9 * runs);
  CHECK(mean < 3.0 - 3 * sd / std::sqrt(runs));
}

TEST_CASE("config validation and JSON") {
  EstimatorConfig cfg;
  cfg.K = 1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.K = 3;
  cfg.r = 4;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.r = 2;
  cfg.lambda_rule.kind = LambdaRule::Kind::theory;
  cfg.lambda_rule.C = 1.5;
  cfg.moment_mode = MomentMode::known;
  cfg.seed = 42;
  const auto back = nlohmann::json(cfg).get<EstimatorConfig>();
  CHECK(back.K == 3);
  CHECK(back.r == 2);
  CHECK(back.lambda_rule.kind == LambdaRule::Kind::theory);
  CHECK(back.lambda_rule.C == 1.5);
  CHECK(back.moment_mode == MomentMode::known);
  CHECK(back.seed == 42);
  CHECK_THROWS(nlohmann::json::parse(R"({"method": "third_order"})").get<EstimatorConfig>());

  const auto inst = make_instance(20, 4, 29);
  const auto data = make_data(inst, 200, 30);
  Rng rng(31);
  const auto rep = cross_fit_estimate(data, &inst, method(EstimationMethod::second_order), rng);
  const nlohmann::json j = rep;
  for (const char* key : {"method", "theta_hat", "se_hat", "ci_95", "J_hat", "V_hat", "folds"}) CHECK(j.contains(key));
  CHECK(j["folds"].size() == 2);
  CHECK(j["folds"][0]["q_l2_error"].is_number());
}
