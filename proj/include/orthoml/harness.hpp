// harness.hpp
// Monte Carlo runner for the synthetic demand-estimation experiments.
//
// For every grid point and every instance (a draw of the coefficients), each
// replication draws a fresh dataset and estimates theta with every configured
// method on that same dataset. Replications are independent tasks with derived
// seeds:
//   instance seed  = derive(seed, {s, instance})
//   dataset seed   = derive(seed, {1, s, instance, rep})
//   fold seed      = derive(dataset seed, {method index, method seed})
// Results are stored per replication and reduced in replication order, so the
// output does not depend on the thread count.
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "orthoml/dgp.hpp"
#include "orthoml/estimator.hpp"

namespace orthoml {

enum class SweepAxis { sparsity, sigma_eps, n_p_pairs };

struct SweepSpec {
  SweepAxis axis = SweepAxis::sparsity;
  std::vector<double> sigma_values;
  std::vector<std::pair<int, int>> n_p_values;
};

struct ExperimentConfig {
  int n = 2000;
  int p = 200;
  std::vector<int> sparsity_grid{0, 20, 40, 80};
  double sigma_eps = 1.0;
  int n_instances = 10;
  int n_reps = 100;
  std::vector<EstimatorConfig> methods;
  std::uint64_t seed = 1;
  std::string output_path;
  std::string scale_preset = "desk";
  double theta0 = 3.0;
  CoefficientLaw coeff_law;
  NoiseDistribution eta_dist = default_discrete_eta();
  bool record_samples = false;
  std::optional<SweepSpec> sweep;

  void validate() const;
};

/// First-order and second-order (r = 3, estimated moments) methods, K = 2.
std::vector<EstimatorConfig> default_methods();
/// n = 2000, p = 200, s in {0, 20, 40, 80}, 10 instances x 100 reps.
ExperimentConfig desk_preset();
/// n = 5000, p = 1000, s = 100, 100 instances x 2000 reps.
ExperimentConfig paper_preset();

/// One (method, grid point, instance) cell aggregated over replications.
struct MCCell {
  std::string method;
  int n = 0;
  int p = 0;
  int s = 0;
  double sigma_eps = 0.0;
  int instance_id = 0;
  double bias = 0.0;
  double sd = 0.0;
  double mse = 0.0;
  double coverage_95 = 0.0;
  double mean_theta = 0.0;
  double j_hat = 0.0;
  double nuisance_l2_q = 0.0;
  double nuisance_l2_gamma = 0.0;
  double mu2_err = 0.0;
  double mu3_err = 0.0;
  int n_ok = 0;
  int n_failed = 0;
};

/// Median, min and max of one cell quantity across instances.
struct MCSummary {
  std::string method;
  int n = 0;
  int p = 0;
  int s = 0;
  double sigma_eps = 0.0;
  std::string quantity;
  double median = 0.0;
  double min = 0.0;
  double max = 0.0;
};

struct ThetaSample {
  std::string method;
  int n = 0;
  int p = 0;
  int s = 0;
  double sigma_eps = 0.0;
  int instance_id = 0;
  int rep = 0;
  double theta_hat = 0.0;
  double se_hat = 0.0;
};

struct MCResults {
  double theta0 = 3.0;
  std::vector<MCCell> cells;
  std::vector<MCSummary> summary;
  std::vector<ThetaSample> samples;
  int n_failed = 0;
  bool flagged = false;  // some cell excluded >= 1% of its replications
  double max_root_residual = 0.0;  // max over estimates of |moment sum at theta_hat| / n
  std::vector<std::string> failure_log;

  void append(const MCResults& other);
};

/// OpenMP fan-out over replications.
MCResults run_monte_carlo(const ExperimentConfig& cfg);
/// Same computation on one thread, kept as the reference for the parallel path.
MCResults run_monte_carlo_serial(const ExperimentConfig& cfg);

/// One run_monte_carlo per grid value of the axis, shared seeds across points.
std::vector<MCResults> sweep(const ExperimentConfig& cfg, const SweepSpec& axis);
MCResults merge(const std::vector<MCResults>& parts);

enum class OutputFormat { csv, json };
OutputFormat parse_format(const std::string& text);

/// CSV: one row per cell under the fixed header (header only when empty).
/// JSON: cells, summary, samples and failure counts in one document.
/// Throws std::runtime_error naming the path on I/O failure.
void write_results(const MCResults& results, const std::string& path, OutputFormat format);
void write_summary_csv(const MCResults& results, const std::string& path);
void write_samples_csv(const MCResults& results, const std::string& path);

std::vector<MCCell> read_results_csv(const std::string& path);
MCResults read_results_json(const std::string& path);

extern const char* const kResultsCsvHeader;

void to_json(nlohmann::json& j, const ExperimentConfig& cfg);
void from_json(const nlohmann::json& j, ExperimentConfig& cfg);
void to_json(nlohmann::json& j, const MCResults& results);
void from_json(const nlohmann::json& j, MCResults& results);

}  // namespace orthoml
