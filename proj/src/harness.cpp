#include "orthoml/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include <omp.h>

namespace orthoml {

void ExperimentConfig::validate() const {
  if (n < 4 || p < 2) throw std::invalid_argument("experiment: need n >= 4 and p >= 2");
  if (sparsity_grid.empty()) throw std::invalid_argument("experiment: empty sparsity grid");
  for (int s : sparsity_grid)
    if (s < 0 || s > p) throw std::invalid_argument("experiment: sparsity " + std::to_string(s) + " outside [0, p]");
  if (!(sigma_eps > 0.0)) throw std::invalid_argument("experiment: sigma_eps must be > 0");
  if (n_instances < 1 || n_reps < 1) throw std::invalid_argument("experiment: need at least one instance and rep");
  if (methods.empty()) throw std::invalid_argument("experiment: no methods");
  for (const auto& m : methods) m.validate();
  if (sweep) {
    if (sweep->axis == SweepAxis::sigma_eps && sweep->sigma_values.empty())
      throw std::invalid_argument("experiment: empty sigma_eps sweep");
    if (sweep->axis == SweepAxis::n_p_pairs && sweep->n_p_values.empty())
      throw std::invalid_argument("experiment: empty (n, p) sweep");
  }
}

std::vector<EstimatorConfig> default_methods() {
  EstimatorConfig first;
  first.method = EstimationMethod::dml_first_order;
  EstimatorConfig second;
  second.method = EstimationMethod::second_order;
  second.r = 3;
  return {first, second};
}

ExperimentConfig desk_preset() {
  ExperimentConfig cfg;
  cfg.methods = default_methods();
  return cfg;
}

ExperimentConfig paper_preset() {
  ExperimentConfig cfg;
  cfg.n = 5000;
  cfg.p = 1000;
  cfg.sparsity_grid = {100};
  cfg.n_instances = 100;
  cfg.n_reps = 2000;
  cfg.scale_preset = "paper";
  cfg.methods = default_methods();
  return cfg;
}

void MCResults::append(const MCResults& other) {
  cells.insert(cells.end(), other.cells.begin(), other.cells.end());
  summary.insert(summary.end(), other.summary.begin(), other.summary.end());
  samples.insert(samples.end(), other.samples.begin(), other.samples.end());
  failure_log.insert(failure_log.end(), other.failure_log.begin(), other.failure_log.end());
  n_failed += other.n_failed;
  flagged = flagged || other.flagged;
  max_root_residual = std::max(max_root_residual, other.max_root_residual);
}

namespace {

struct RepOutcome {
  bool ok = false;
  double theta_hat = 0.0;
  double se_hat = 0.0;
  bool covered = false;
  double j_hat = 0.0;
  double q_err = 0.0;
  double gamma_err = 0.0;
  double mu2_err = 0.0;
  double mu3_err = 0.0;
  double root_residual = 0.0;
  std::string failure;
};

double fold_mean(const std::vector<FoldDiagnostics>& folds, std::optional<double> NuisanceDiagnostics::*field) {
  double total = 0.0;
  int count = 0;
  for (const auto& f : folds)
    if (f.nuisance.*field) {
      total += *(f.nuisance.*field);
      ++count;
    }
  return count ? total / count : 0.0;
}

std::vector<RepOutcome> run_rep(const ExperimentConfig& cfg, const PLRInstance& inst, int n, int s, int instance_id,
                                int rep) {
  const std::uint64_t data_seed =
      derive_seed(cfg.seed, {1, static_cast<std::uint64_t>(s), static_cast<std::uint64_t>(instance_id),
                             static_cast<std::uint64_t>(rep)});
  Rng data_rng(data_seed);
  const Dataset data = generate_dataset(inst, n, data_rng);

  std::vector<RepOutcome> out(cfg.methods.size());
  for (std::size_t m = 0; m < cfg.methods.size(); ++m) {
    const auto& method = cfg.methods[m];
    Rng fold_rng(derive_seed(data_seed, {m, method.seed}));
    RepOutcome& o = out[m];
    try {
      const EstimateReport report = cross_fit_estimate(data, &inst, method, fold_rng);
      o.theta_hat = report.theta_hat;
      o.se_hat = report.se_hat;
      o.covered = report.ci_95.contains(inst.theta0);
      o.j_hat = report.J_hat;
      o.root_residual = std::abs(report.moment_sum) / report.n_second_stage;
      o.q_err = fold_mean(report.folds, &NuisanceDiagnostics::q_l2_error);
      o.gamma_err = fold_mean(report.folds, &NuisanceDiagnostics::gamma_l2_error);
      o.mu2_err = fold_mean(report.folds, &NuisanceDiagnostics::mu2_error);
      o.mu3_err = fold_mean(report.folds, &NuisanceDiagnostics::mu3_error);
      o.ok = report.lasso_converged && std::isfinite(report.theta_hat);
      if (!report.lasso_converged) o.failure = "lasso did not converge";
    } catch (const DegenerateJacobian& e) {
      o.failure = e.what();
    }
  }
  return out;
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t k = v.size();
  return k % 2 ? v[k / 2] : 0.5 * (v[k / 2 - 1] + v[k / 2]);
}

MCResults run_grid_point(const ExperimentConfig& cfg, int n, int p, int s, double sigma_eps, bool parallel) {
  std::vector<PLRInstance> instances;
  instances.reserve(static_cast<std::size_t>(cfg.n_instances));
  for (int i = 0; i < cfg.n_instances; ++i) {
    Rng rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(s), static_cast<std::uint64_t>(i)}));
    instances.push_back(generate_instance(p, s, cfg.theta0, cfg.coeff_law, cfg.eta_dist,
                                          NoiseDistribution::uniform(sigma_eps), rng));
  }

  const long long n_tasks = static_cast<long long>(cfg.n_instances) * cfg.n_reps;
  std::vector<std::vector<RepOutcome>> outcomes(static_cast<std::size_t>(n_tasks));
  auto task = [&](long long k) {
    const int i = static_cast<int>(k / cfg.n_reps);
    const int rep = static_cast<int>(k % cfg.n_reps);
    outcomes[static_cast<std::size_t>(k)] = run_rep(cfg, instances[static_cast<std::size_t>(i)], n, s, i, rep);
  };
  if (parallel) {
#pragma omp parallel for schedule(dynamic)
    for (long long k = 0; k < n_tasks; ++k) task(k);
  } else {
    for (long long k = 0; k < n_tasks; ++k) task(k);
  }

  MCResults res;
  res.theta0 = cfg.theta0;
  for (std::size_t m = 0; m < cfg.methods.size(); ++m) {
    const std::string name = cfg.methods[m].name();
    std::vector<MCCell> method_cells;
    for (int i = 0; i < cfg.n_instances; ++i) {
      MCCell cell;
      cell.method = name;
      cell.n = n;
      cell.p = p;
      cell.s = s;
      cell.sigma_eps = sigma_eps;
      cell.instance_id = i;
      double sum_theta = 0.0;
      for (int rep = 0; rep < cfg.n_reps; ++rep) {
        const auto& o = outcomes[static_cast<std::size_t>(i) * cfg.n_reps + rep][m];
        if (!o.ok) {
          ++cell.n_failed;
          std::ostringstream msg;
          msg << name << " s=" << s << " instance=" << i << " rep=" << rep << ": " << o.failure;
          res.failure_log.push_back(msg.str());
          continue;
        }
        ++cell.n_ok;
        res.max_root_residual = std::max(res.max_root_residual, o.root_residual);
        sum_theta += o.theta_hat;
        cell.coverage_95 += o.covered ? 1.0 : 0.0;
        cell.j_hat += o.j_hat;
        cell.nuisance_l2_q += o.q_err;
        cell.nuisance_l2_gamma += o.gamma_err;
        cell.mu2_err += o.mu2_err;
        cell.mu3_err += o.mu3_err;
        if (cfg.record_samples)
          res.samples.push_back({name, n, p, s, sigma_eps, i, rep, o.theta_hat, o.se_hat});
      }
      if (cell.n_ok > 0) {
        const double k = cell.n_ok;
        cell.mean_theta = sum_theta / k;
        double ss = 0.0;
        double sq_err = 0.0;
        for (int rep = 0; rep < cfg.n_reps; ++rep) {
          const auto& o = outcomes[static_cast<std::size_t>(i) * cfg.n_reps + rep][m];
          if (!o.ok) continue;
          ss += (o.theta_hat - cell.mean_theta) * (o.theta_hat - cell.mean_theta);
          sq_err += (o.theta_hat - cfg.theta0) * (o.theta_hat - cfg.theta0);
        }
        cell.bias = cell.mean_theta - cfg.theta0;
        cell.sd = std::sqrt(ss / k);
        cell.mse = sq_err / k;
        cell.coverage_95 /= k;
        cell.j_hat /= k;
        cell.nuisance_l2_q /= k;
        cell.nuisance_l2_gamma /= k;
        cell.mu2_err /= k;
        cell.mu3_err /= k;
      }
      res.n_failed += cell.n_failed;
      if (cell.n_failed * 100 >= cfg.n_reps) {
        res.flagged = true;
        std::cerr << "orthoml: " << name << " s=" << s << " instance " << i << " excluded " << cell.n_failed << " of "
                  << cfg.n_reps << " replications\n";
      }
      method_cells.push_back(cell);
    }

    const std::pair<const char*, double MCCell::*> quantities[] = {
        {"bias", &MCCell::bias},
        {"sd", &MCCell::sd},
        {"mse", &MCCell::mse},
        {"coverage_95", &MCCell::coverage_95},
        {"nuisance_l2_q", &MCCell::nuisance_l2_q},
        {"nuisance_l2_gamma", &MCCell::nuisance_l2_gamma}};
    for (const auto& [qname, field] : quantities) {
      std::vector<double> v;
      for (const auto& c : method_cells) v.push_back(c.*field);
      res.summary.push_back({name, n, p, s, sigma_eps, qname, median_of(v), *std::min_element(v.begin(), v.end()),
                             *std::max_element(v.begin(), v.end())});
    }
    res.cells.insert(res.cells.end(), method_cells.begin(), method_cells.end());
  }
  return res;
}

MCResults run_all(const ExperimentConfig& cfg, bool parallel) {
  cfg.validate();
  MCResults all;
  all.theta0 = cfg.theta0;
  for (int s : cfg.sparsity_grid) all.append(run_grid_point(cfg, cfg.n, cfg.p, s, cfg.sigma_eps, parallel));
  return all;
}

}  // namespace

MCResults run_monte_carlo(const ExperimentConfig& cfg) { return run_all(cfg, true); }

MCResults run_monte_carlo_serial(const ExperimentConfig& cfg) { return run_all(cfg, false); }

std::vector<MCResults> sweep(const ExperimentConfig& cfg, const SweepSpec& axis) {
  std::vector<MCResults> out;
  switch (axis.axis) {
    case SweepAxis::sparsity:
      if (cfg.sparsity_grid.empty()) throw std::invalid_argument("sweep: empty sparsity grid");
      for (int s : cfg.sparsity_grid) {
        ExperimentConfig point = cfg;
        point.sparsity_grid = {s};
        out.push_back(run_monte_carlo(point));
      }
      break;
    case SweepAxis::sigma_eps:
      if (axis.sigma_values.empty()) throw std::invalid_argument("sweep: empty sigma_eps grid");
      for (double sigma : axis.sigma_values) {
        ExperimentConfig point = cfg;
        point.sigma_eps = sigma;
        out.push_back(run_monte_carlo(point));
      }
      break;
    case SweepAxis::n_p_pairs:
      if (axis.n_p_values.empty()) throw std::invalid_argument("sweep: empty (n, p) grid");
      for (auto [n, p] : axis.n_p_values) {
        ExperimentConfig point = cfg;
        point.n = n;
        point.p = p;
        out.push_back(run_monte_carlo(point));
      }
      break;
  }
  return out;
}

MCResults merge(const std::vector<MCResults>& parts) {
  MCResults all;
  if (!parts.empty()) all.theta0 = parts.front().theta0;
  for (const auto& part : parts) all.append(part);
  return all;
}

// ---------------------------------------------------------------------------
// Output

const char* const kResultsCsvHeader =
    "method,n,p,s,sigma_eps,instance_id,bias,sd,mse,coverage_95,mean_theta,j_hat,nuisance_l2_q,nuisance_l2_gamma,"
    "mu2_err,mu3_err,n_ok,n_failed";

OutputFormat parse_format(const std::string& text) {
  if (text == "csv") return OutputFormat::csv;
  if (text == "json") return OutputFormat::json;
  throw std::invalid_argument("unknown output format: " + text);
}

namespace {

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.precision(17);
  return out;
}

void finish_output(std::ofstream& out, const std::string& path) {
  out.flush();
  if (!out) throw std::runtime_error("write failed for " + path);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

}  // namespace

void write_results(const MCResults& results, const std::string& path, OutputFormat format) {
  auto out = open_output(path);
  if (format == OutputFormat::json) {
    out << nlohmann::json(results).dump(2) << '\n';
  } else {
    out << kResultsCsvHeader << '\n';
    for (const auto& c : results.cells)
      out << c.method << ',' << c.n << ',' << c.p << ',' << c.s << ',' << c.sigma_eps << ',' << c.instance_id << ','
          << c.bias << ',' << c.sd << ',' << c.mse << ',' << c.coverage_95 << ',' << c.mean_theta << ',' << c.j_hat
          << ',' << c.nuisance_l2_q << ',' << c.nuisance_l2_gamma << ',' << c.mu2_err << ',' << c.mu3_err << ','
          << c.n_ok << ',' << c.n_failed << '\n';
  }
  finish_output(out, path);
}

void write_summary_csv(const MCResults& results, const std::string& path) {
  auto out = open_output(path);
  out << "method,n,p,s,sigma_eps,quantity,median,min,max\n";
  for (const auto& r : results.summary)
    out << r.method << ',' << r.n << ',' << r.p << ',' << r.s << ',' << r.sigma_eps << ',' << r.quantity << ','
        << r.median << ',' << r.min << ',' << r.max << '\n';
  finish_output(out, path);
}

void write_samples_csv(const MCResults& results, const std::string& path) {
  auto out = open_output(path);
  out << "method,n,p,s,sigma_eps,instance_id,rep,theta_hat,se_hat,theta0\n";
  for (const auto& r : results.samples)
    out << r.method << ',' << r.n << ',' << r.p << ',' << r.s << ',' << r.sigma_eps << ',' << r.instance_id << ','
        << r.rep << ',' << r.theta_hat << ',' << r.se_hat << ',' << results.theta0 << '\n';
  finish_output(out, path);
}

std::vector<MCCell> read_results_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path + " for reading");
  std::string line;
  if (!std::getline(in, line) || line != kResultsCsvHeader)
    throw std::runtime_error(path + ": unexpected results header");
  std::vector<MCCell> cells;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 18) throw std::runtime_error(path + ": expected 18 columns, got " + std::to_string(f.size()));
    MCCell c;
    std::size_t k = 0;
    c.method = f[k++];
    c.n = std::stoi(f[k++]);
    c.p = std::stoi(f[k++]);
    c.s = std::stoi(f[k++]);
    c.sigma_eps = std::stod(f[k++]);
    c.instance_id = std::stoi(f[k++]);
    for (double MCCell::*field : {&MCCell::bias, &MCCell::sd, &MCCell::mse, &MCCell::coverage_95, &MCCell::mean_theta,
                                  &MCCell::j_hat, &MCCell::nuisance_l2_q, &MCCell::nuisance_l2_gamma, &MCCell::mu2_err,
                                  &MCCell::mu3_err})
      c.*field = std::stod(f[k++]);
    c.n_ok = std::stoi(f[k++]);
    c.n_failed = std::stoi(f[k++]);
    cells.push_back(c);
  }
  return cells;
}

MCResults read_results_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path + " for reading");
  return nlohmann::json::parse(in).get<MCResults>();
}

// ---------------------------------------------------------------------------
// JSON

void to_json(nlohmann::json& j, const ExperimentConfig& cfg) {
  j = nlohmann::json{{"n", cfg.n},
                     {"p", cfg.p},
                     {"sparsity_grid", cfg.sparsity_grid},
                     {"sigma_eps", cfg.sigma_eps},
                     {"n_instances", cfg.n_instances},
                     {"n_reps", cfg.n_reps},
                     {"methods", cfg.methods},
                     {"seed", cfg.seed},
                     {"output_path", cfg.output_path},
                     {"scale_preset", cfg.scale_preset},
                     {"theta0", cfg.theta0},
                     {"coeff_law", {{"lo", cfg.coeff_law.lo}, {"hi", cfg.coeff_law.hi}}},
                     {"eta_dist", cfg.eta_dist},
                     {"record_samples", cfg.record_samples}};
  if (cfg.sweep) {
    switch (cfg.sweep->axis) {
      case SweepAxis::sparsity: j["sweep"] = {{"axis", "sparsity"}}; break;
      case SweepAxis::sigma_eps: j["sweep"] = {{"axis", "sigma_eps"}, {"values", cfg.sweep->sigma_values}}; break;
      case SweepAxis::n_p_pairs: {
        nlohmann::json values = nlohmann::json::array();
        for (auto [n, p] : cfg.sweep->n_p_values) values.push_back({n, p});
        j["sweep"] = {{"axis", "n_p_pairs"}, {"values", values}};
        break;
      }
    }
  }
}

void from_json(const nlohmann::json& j, ExperimentConfig& cfg) {
  cfg = ExperimentConfig{};
  cfg.n = j.value("n", cfg.n);
  cfg.p = j.value("p", cfg.p);
  cfg.sparsity_grid = j.value("sparsity_grid", cfg.sparsity_grid);
  cfg.sigma_eps = j.value("sigma_eps", cfg.sigma_eps);
  cfg.n_instances = j.value("n_instances", cfg.n_instances);
  cfg.n_reps = j.value("n_reps", cfg.n_reps);
  cfg.methods = j.contains("methods") ? j.at("methods").get<std::vector<EstimatorConfig>>() : default_methods();
  cfg.seed = j.value("seed", cfg.seed);
  cfg.output_path = j.value("output_path", std::string());
  cfg.scale_preset = j.value("scale_preset", cfg.scale_preset);
  cfg.theta0 = j.value("theta0", cfg.theta0);
  if (j.contains("coeff_law")) {
    cfg.coeff_law.lo = j.at("coeff_law").value("lo", 0.0);
    cfg.coeff_law.hi = j.at("coeff_law").value("hi", 5.0);
  }
  if (j.contains("eta_dist")) cfg.eta_dist = j.at("eta_dist").get<NoiseDistribution>();
  cfg.record_samples = j.value("record_samples", false);
  if (j.contains("sweep")) {
    const auto& sw = j.at("sweep");
    const auto axis = sw.at("axis").get<std::string>();
    SweepSpec spec;
    if (axis == "sparsity") {
      spec.axis = SweepAxis::sparsity;
    } else if (axis == "sigma_eps") {
      spec.axis = SweepAxis::sigma_eps;
      spec.sigma_values = sw.at("values").get<std::vector<double>>();
    } else if (axis == "n_p_pairs") {
      spec.axis = SweepAxis::n_p_pairs;
      for (const auto& pair : sw.at("values")) spec.n_p_values.emplace_back(pair.at(0).get<int>(), pair.at(1).get<int>());
    } else {
      throw std::invalid_argument("unknown sweep axis: " + axis);
    }
    cfg.sweep = spec;
  }
  cfg.validate();
}

void to_json(nlohmann::json& j, const MCResults& results) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : results.cells)
    cells.push_back({{"method", c.method},
                     {"n", c.n},
                     {"p", c.p},
                     {"s", c.s},
                     {"sigma_eps", c.sigma_eps},
                     {"instance_id", c.instance_id},
                     {"bias", c.bias},
                     {"sd", c.sd},
                     {"mse", c.mse},
                     {"coverage_95", c.coverage_95},
                     {"mean_theta", c.mean_theta},
                     {"j_hat", c.j_hat},
                     {"nuisance_l2_q", c.nuisance_l2_q},
                     {"nuisance_l2_gamma", c.nuisance_l2_gamma},
                     {"mu2_err", c.mu2_err},
                     {"mu3_err", c.mu3_err},
                     {"n_ok", c.n_ok},
                     {"n_failed", c.n_failed}});
  nlohmann::json summary = nlohmann::json::array();
  for (const auto& r : results.summary)
    summary.push_back({{"method", r.method},
                       {"n", r.n},
                       {"p", r.p},
                       {"s", r.s},
                       {"sigma_eps", r.sigma_eps},
                       {"quantity", r.quantity},
                       {"median", r.median},
                       {"min", r.min},
                       {"max", r.max}});
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& r : results.samples)
    samples.push_back({{"method", r.method},
                       {"n", r.n},
                       {"p", r.p},
                       {"s", r.s},
                       {"sigma_eps", r.sigma_eps},
                       {"instance_id", r.instance_id},
                       {"rep", r.rep},
                       {"theta_hat", r.theta_hat},
                       {"se_hat", r.se_hat}});
  j = nlohmann::json{{"schema_version", 1},   {"theta0", results.theta0},   {"n_failed", results.n_failed},
                     {"flagged", results.flagged}, {"max_root_residual", results.max_root_residual}, {"cells", cells}, {"summary", summary},
                     {"samples", samples}};
}

void from_json(const nlohmann::json& j, MCResults& results) {
  results = MCResults{};
  results.theta0 = j.at("theta0").get<double>();
  results.n_failed = j.at("n_failed").get<int>();
  results.flagged = j.at("flagged").get<bool>();
  results.max_root_residual = j.at("max_root_residual").get<double>();
  for (const auto& c : j.at("cells")) {
    MCCell cell;
    cell.method = c.at("method").get<std::string>();
    cell.n = c.at("n").get<int>();
    cell.p = c.at("p").get<int>();
    cell.s = c.at("s").get<int>();
    cell.sigma_eps = c.at("sigma_eps").get<double>();
    cell.instance_id = c.at("instance_id").get<int>();
    cell.bias = c.at("bias").get<double>();
    cell.sd = c.at("sd").get<double>();
    cell.mse = c.at("mse").get<double>();
    cell.coverage_95 = c.at("coverage_95").get<double>();
    cell.mean_theta = c.at("mean_theta").get<double>();
    cell.j_hat = c.at("j_hat").get<double>();
    cell.nuisance_l2_q = c.at("nuisance_l2_q").get<double>();
    cell.nuisance_l2_gamma = c.at("nuisance_l2_gamma").get<double>();
    cell.mu2_err = c.at("mu2_err").get<double>();
    cell.mu3_err = c.at("mu3_err").get<double>();
    cell.n_ok = c.at("n_ok").get<int>();
    cell.n_failed = c.at("n_failed").get<int>();
    results.cells.push_back(cell);
  }
  for (const auto& r : j.at("summary"))
    results.summary.push_back({r.at("method").get<std::string>(), r.at("n").get<int>(), r.at("p").get<int>(),
                               r.at("s").get<int>(), r.at("sigma_eps").get<double>(),
                               r.at("quantity").get<std::string>(), r.at("median").get<double>(),
                               r.at("min").get<double>(), r.at("max").get<double>()});
  for (const auto& r : j.at("samples"))
    results.samples.push_back({r.at("method").get<std::string>(), r.at("n").get<int>(), r.at("p").get<int>(),
                               r.at("s").get<int>(), r.at("sigma_eps").get<double>(), r.at("instance_id").get<int>(),
                               r.at("rep").get<int>(), r.at("theta_hat").get<double>(),
                               r.at("se_hat").get<double>()});
}

}  // namespace orthoml
