#include "orthoml/ortho_check.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace orthoml {

OrthogonalitySet orthogonality_set(const MomentSpec& spec) {
  spec.validate();
  const int dims = spec.nuisance_dims();
  const int max_order = spec.kind == MomentKind::first_order ? 1 : 2;
  const auto excluded = excluded_indices(spec, 0.0);

  OrthogonalitySet set;
  set.k = 0;
  MultiIndex a{};
  for (a[0] = 0; a[0] <= max_order; ++a[0])
    for (a[1] = 0; a[1] <= max_order; ++a[1])
      for (a[2] = 0; a[2] <= (dims > 2 ? max_order : 0); ++a[2])
        for (a[3] = 0; a[3] <= (dims > 3 ? max_order : 0); ++a[3]) {
          if (order(a) > max_order) continue;
          bool skip = false;
          for (const auto& ex : excluded) skip = skip || ex.alpha == a;
          if (skip) continue;
          set.indices.push_back(a);
          set.k = std::max(set.k, order(a));
        }
  return set;
}

std::vector<ExcludedIndex> excluded_indices(const MomentSpec& spec, double theta) {
  if (spec.kind == MomentKind::second_order && spec.mode == MomentMode::estimated)
    return {{{1, 0, 0, 1}, 1.0}, {{0, 1, 0, 1}, -theta}};
  return {};
}

MomentSpec spec_for_truth(MomentKind kind, int r, MomentMode mode, const PLRInstance& dgp) {
  if (kind == MomentKind::first_order) return MomentSpec::first_order();
  if (mode == MomentMode::estimated) return MomentSpec::second_order(r);
  return MomentSpec::second_order_known(r, exact_noise_moments(dgp.eta_dist, r)[static_cast<std::size_t>(r - 1)]);
}

NuisancePoint true_nuisance_at(const MomentSpec& spec, const PLRInstance& dgp,
                               const Eigen::Ref<const Eigen::VectorXd>& x) {
  if (x.size() != dgp.p) throw std::invalid_argument("x point dimension differs from instance");
  NuisancePoint np;
  np.q = x.dot(dgp.q0);
  np.g = x.dot(dgp.gamma0);
  const auto m = exact_noise_moments(dgp.eta_dist, 3);
  if (spec.kind == MomentKind::second_order && spec.r == 2) {
    // mu_{r-1} = E[eta | X] at the truth.
    np.mu_prev = m[0];
    np.mu_r = m[1];
  } else {
    set_residual_coordinates(spec, m[1], m[2], np);
  }
  return np;
}

namespace {

double z_of(double estimate, double se) {
  if (se > 0.0) return estimate / se;
  if (estimate == 0.0) return 0.0;
  return estimate > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
}

struct RunningMean {
  double mean = 0.0;
  double m2 = 0.0;
  long long n = 0;
  void add(double x) {
    ++n;
    const double d = x - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (x - mean);
  }
  double se() const { return n > 1 ? std::sqrt(m2 / static_cast<double>(n - 1) / static_cast<double>(n)) : 0.0; }
};

}  // namespace

CheckResult conditional_orthogonality_check(const MomentSpec& spec, const PLRInstance& dgp,
                                            const Eigen::Ref<const Eigen::VectorXd>& x_point,
                                            const MultiIndex& alpha, int mc_size, Rng& rng) {
  if (mc_size < 2) throw std::invalid_argument("orthogonality check: mc_size must be >= 2");
  if (order(alpha) > 3) throw std::invalid_argument("orthogonality check: order above 3 is not supported");
  const NuisancePoint np = true_nuisance_at(spec, dgp, x_point);
  const double f_x = x_point.dot(dgp.beta0);

  CheckResult out;
  out.alpha = alpha;
  for (const auto& ex : excluded_indices(spec, dgp.theta0)) {
    if (ex.alpha != alpha) continue;
    const double eta = dgp.eta_dist.sample(rng);
    const double t = np.g + eta;
    const double y = dgp.theta0 * t + f_x + dgp.eps_dist.sample(rng);
    out.estimate = dalpha_moment(spec, alpha, t, y, dgp.theta0, np);
    out.closed_form = ex.closed_form;
    out.verdict = std::abs(out.estimate - ex.closed_form) <= 1e-12 * std::max(1.0, std::abs(ex.closed_form))
                      ? Verdict::deterministic_nonzero
                      : Verdict::fail;
    return out;
  }

  RunningMean acc;
  for (int i = 0; i < mc_size; ++i) {
    const double t = np.g + dgp.eta_dist.sample(rng);
    const double y = dgp.theta0 * t + f_x + dgp.eps_dist.sample(rng);
    acc.add(dalpha_moment(spec, alpha, t, y, dgp.theta0, np));
  }
  out.estimate = acc.mean;
  out.std_error = acc.se();
  // Floating-point noise around an exactly-zero derivative is not a signal.
  if (acc.m2 == 0.0 && std::abs(acc.mean) < 1e-12) out.estimate = 0.0;
  out.z_score = z_of(out.estimate, out.std_error);
  out.verdict = std::abs(out.z_score) <= kZThreshold ? Verdict::pass : Verdict::fail;
  return out;
}

std::vector<DegeneracyRow> jacobian_degeneracy_scan(int r, const std::vector<NamedLaw>& eta_variants, int n,
                                                    Rng& rng) {
  if (r != 2 && r != 3) throw std::invalid_argument("degeneracy scan: r must be 2 or 3");
  if (n < 2) throw std::invalid_argument("degeneracy scan: n must be >= 2");
  const MomentSpec spec = MomentSpec::second_order(r);
  std::vector<DegeneracyRow> rows;
  std::uint64_t stream = 0;
  for (const auto& variant : eta_variants) {
    Rng local = rng.split(stream++);
    const auto m = exact_noise_moments(variant.law, r + 1);
    auto raw = [&](int k) { return k == 0 ? 1.0 : m[static_cast<std::size_t>(k - 1)]; };
    NuisancePoint np;  // g = 0 at x = 0; residual coordinates at the truth
    np.mu_prev = raw(r - 1);
    np.mu_r = raw(r);

    DegeneracyRow row;
    row.variant = variant.name;
    row.r = r;
    row.J_exact = -(raw(r + 1) - raw(r) * raw(1) - r * raw(r - 1) * raw(2));
    RunningMean acc;
    for (int i = 0; i < n; ++i) acc.add(dtheta_moment(spec, variant.law.sample(local), 0.0, 0.0, np));
    row.J_hat = acc.mean;
    row.std_error = acc.se();
    row.z_score = z_of(row.J_hat, row.std_error);
    row.z_vs_exact = z_of(row.J_hat - row.J_exact, row.std_error);
    rows.push_back(row);
  }
  return rows;
}

// ---------------------------------------------------------------------------

namespace {

struct Stencil {
  int offsets[4];
  long double weights[4];
  int size;
};

Stencil stencil_for(int k) {
  switch (k) {
    case 0: return {{0}, {1.0L}, 1};
    case 1: return {{-1, 1}, {-0.5L, 0.5L}, 2};
    case 2: return {{-1, 0, 1}, {1.0L, -2.0L, 1.0L}, 3};
    case 3: return {{-2, -1, 1, 2}, {-0.5L, 1.0L, -1.0L, 0.5L}, 4};
  }
  throw std::invalid_argument("finite differences: per-coordinate order above 3");
}

long double tensor_difference(const MomentSpec& spec, const MultiIndex& alpha, const EvalPoint& point,
                              long double h) {
  const Stencil s[4] = {stencil_for(alpha[0]), stencil_for(alpha[1]), stencil_for(alpha[2]), stencil_for(alpha[3])};
  const long double base[4] = {point.np.q, point.np.g, point.np.mu_prev, point.np.mu_r};
  long double total = 0.0L;
  for (int i0 = 0; i0 < s[0].size; ++i0)
    for (int i1 = 0; i1 < s[1].size; ++i1)
      for (int i2 = 0; i2 < s[2].size; ++i2)
        for (int i3 = 0; i3 < s[3].size; ++i3) {
          BasicNuisancePoint<long double> np{base[0] + s[0].offsets[i0] * h, base[1] + s[1].offsets[i1] * h,
                                             base[2] + s[2].offsets[i2] * h, base[3] + s[3].offsets[i3] * h};
          const long double weight = s[0].weights[i0] * s[1].weights[i1] * s[2].weights[i2] * s[3].weights[i3];
          total += weight * moment_value<long double>(spec, point.t, point.y, point.theta, np);
        }
  long double scale = 1.0L;
  for (int i = 0; i < order(alpha); ++i) scale *= h;
  return total / scale;
}

}  // namespace

double finite_diff_differential(const MomentSpec& spec, const MultiIndex& alpha, const EvalPoint& point, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite differences: step must be positive");
  spec.validate();
  for (int i = spec.nuisance_dims(); i < 4; ++i)
    if (alpha[static_cast<std::size_t>(i)] != 0)
      throw std::invalid_argument("finite differences: spec does not depend on nuisance coordinate " + std::to_string(i));
  const long double coarse = tensor_difference(spec, alpha, point, h);
  const long double fine = tensor_difference(spec, alpha, point, h / 2.0L);
  return static_cast<double>((4.0L * fine - coarse) / 3.0L);
}

// ---------------------------------------------------------------------------

std::string spec_label(const MomentSpec& spec) {
  if (spec.kind == MomentKind::first_order) return "first_order";
  return "second_order_r" + std::to_string(spec.r) + (spec.mode == MomentMode::known ? "_known" : "_estimated");
}

std::vector<SuiteRow> run_orthogonality_suite(const std::vector<MomentSpec>& specs, const PLRInstance& dgp,
                                              const SuiteConfig& cfg) {
  struct Task {
    std::size_t spec;
    int x;
    MultiIndex alpha;
    bool in_set;
  };
  std::vector<Task> tasks;
  for (std::size_t si = 0; si < specs.size(); ++si) {
    const auto set = orthogonality_set(specs[si]);
    const auto excluded = excluded_indices(specs[si], dgp.theta0);
    for (int x = 0; x < cfg.x_points; ++x) {
      for (const auto& a : set.indices) tasks.push_back({si, x, a, true});
      for (const auto& ex : excluded) tasks.push_back({si, x, ex.alpha, false});
    }
  }

  std::vector<Eigen::VectorXd> xs;
  Rng x_rng(derive_seed(cfg.seed, {0x78}));
  for (int x = 0; x < cfg.x_points; ++x) {
    Eigen::VectorXd v(dgp.p);
    for (int j = 0; j < dgp.p; ++j) v[j] = x_rng.normal();
    xs.push_back(std::move(v));
  }

  std::vector<SuiteRow> rows(tasks.size());
  const auto n_tasks = static_cast<long long>(tasks.size());
#pragma omp parallel for schedule(dynamic)
  for (long long i = 0; i < n_tasks; ++i) {
    const Task& task = tasks[static_cast<std::size_t>(i)];
    Rng rng(derive_seed(cfg.seed, {task.spec, static_cast<std::uint64_t>(task.x),
                                   static_cast<std::uint64_t>(task.alpha[0] * 64 + task.alpha[1] * 16 +
                                                              task.alpha[2] * 4 + task.alpha[3])}));
    SuiteRow row;
    row.spec_label = spec_label(specs[task.spec]);
    row.x_index = task.x;
    row.in_set = task.in_set;
    row.result = conditional_orthogonality_check(specs[task.spec], dgp, xs[static_cast<std::size_t>(task.x)],
                                                 task.alpha, cfg.mc_size, rng);
    rows[static_cast<std::size_t>(i)] = std::move(row);
  }
  return rows;
}

bool suite_passed(const std::vector<SuiteRow>& rows) {
  for (const auto& row : rows) {
    if (row.in_set && row.result.verdict != Verdict::pass) return false;
    if (!row.in_set && row.result.verdict != Verdict::deterministic_nonzero) return false;
  }
  return true;
}

std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::pass: return "pass";
    case Verdict::fail: return "fail";
    case Verdict::deterministic_nonzero: return "deterministic_nonzero";
  }
  return "?";
}

std::string to_string(const MultiIndex& alpha) {
  std::ostringstream os;
  os << '(' << alpha[0] << ',' << alpha[1] << ',' << alpha[2] << ',' << alpha[3] << ')';
  return os.str();
}

void to_json(nlohmann::json& j, const SuiteRow& row) {
  j = nlohmann::json{{"spec", row.spec_label},
                     {"x_index", row.x_index},
                     {"alpha", row.result.alpha},
                     {"in_set", row.in_set},
                     {"estimate", row.result.estimate},
                     {"std_error", row.result.std_error},
                     {"z_score", std::isfinite(row.result.z_score) ? nlohmann::json(row.result.z_score)
                                                                   : nlohmann::json(nullptr)},
                     {"verdict", to_string(row.result.verdict)}};
  if (row.result.closed_form) j["closed_form"] = *row.result.closed_form;
}

void to_json(nlohmann::json& j, const DegeneracyRow& row) {
  j = nlohmann::json{{"variant", row.variant}, {"r", row.r},         {"J_hat", row.J_hat},
                     {"std_error", row.std_error}, {"z_score", row.z_score}, {"J_exact", row.J_exact},
                     {"z_vs_exact", row.z_vs_exact}};
}

std::string suite_csv(const std::vector<SuiteRow>& rows) {
  std::ostringstream os;
  os.precision(17);
  os << "spec,x_index,alpha,in_set,estimate,std_error,z_score,verdict,closed_form\n";
  for (const auto& row : rows) {
    os << row.spec_label << ',' << row.x_index << ",\"" << to_string(row.result.alpha) << "\"," << row.in_set << ','
       << row.result.estimate << ',' << row.result.std_error << ',' << row.result.z_score << ','
       << to_string(row.result.verdict) << ',';
    if (row.result.closed_form) os << *row.result.closed_form;
    os << '\n';
  }
  return os.str();
}

std::string degeneracy_csv(const std::vector<DegeneracyRow>& rows) {
  std::ostringstream os;
  os.precision(17);
  os << "variant,r,J_hat,std_error,z_score,J_exact,z_vs_exact\n";
  for (const auto& row : rows)
    os << row.variant << ',' << row.r << ',' << row.J_hat << ',' << row.std_error << ',' << row.z_score << ','
       << row.J_exact << ',' << row.z_vs_exact << '\n';
  return os.str();
}

}  // namespace orthoml
