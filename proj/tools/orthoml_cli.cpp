// orthoml: command-line front end for the estimators, the orthogonality checks
// and the Monte Carlo harness.
//
// Exit codes: 0 success, 1 usage error, 2 runtime failure (including a failed
// orthogonality check).
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <omp.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "orthoml/estimator.hpp"
#include "orthoml/harness.hpp"
#include "orthoml/ortho_check.hpp"

using namespace orthoml;

namespace {

ExperimentConfig preset(const std::string& name) {
  if (name == "desk") return desk_preset();
  if (name == "paper") return paper_preset();
  throw std::invalid_argument("unknown preset: " + name);
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  return nlohmann::json::parse(in).get<ExperimentConfig>();
}

void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + out_path + " for writing");
  out << text;
  if (!out) throw std::runtime_error("write failed for " + out_path);
}

std::string sibling(const std::string& path, const std::string& suffix) {
  const auto dot = path.find_last_of('.');
  const auto slash = path.find_last_of('/');
  if (dot == std::string::npos || (slash != std::string::npos && dot < slash)) return path + suffix;
  return path.substr(0, dot) + suffix;
}

void set_threads(int flag_threads) {
  int threads = flag_threads;
  if (threads <= 0) {
    if (const char* env = std::getenv("ORTHOML_THREADS")) threads = std::atoi(env);
  }
  if (threads > 0) omp_set_num_threads(threads);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Orthogonal two-stage estimation of treatment effects in the partially linear model"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_path;
  std::string format = "csv";
  std::string preset_name = "desk";
  int threads = 0;
  int mc_size = 100000;
  int x_points = 10;
  int scan_r = 3;
  int scan_n = 100000;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--seed", seed, "Random seed (overrides the config)");
    cmd->add_option("--out", out_path, "Output path");
    cmd->add_option("--format", format, "Output format")->check(CLI::IsMember({"csv", "json"}));
    cmd->add_option("--threads", threads, "Worker threads (default: ORTHOML_THREADS or all cores)");
  };

  auto* simulate = app.add_subcommand("simulate", "Run a Monte Carlo experiment from a config file");
  simulate->add_option("--config", config_path, "Experiment config (JSON)");
  simulate->add_option("--preset", preset_name, "Preset used when no config is given")
      ->check(CLI::IsMember({"desk", "paper"}));
  add_common(simulate);

  auto* check = app.add_subcommand("check-orthogonality", "Monte Carlo orthogonality checks at the truth");
  check->add_option("--mc-size", mc_size, "Draws per check")->check(CLI::Range(2, 100000000));
  check->add_option("--x-points", x_points, "Covariate points per index")->check(CLI::Range(1, 10000));
  add_common(check);

  auto* scan = app.add_subcommand("degeneracy-scan", "Mean theta-Jacobian of second-order moments per treatment law");
  scan->add_option("--r", scan_r, "Moment order")->check(CLI::IsMember({2, 3}));
  scan->add_option("--n", scan_n, "Draws per law")->check(CLI::Range(2, 100000000));
  add_common(scan);

  auto* single = app.add_subcommand("single-estimate", "Estimate theta on one simulated dataset and print the reports");
  single->add_option("--config", config_path, "Experiment config (JSON); first grid point is used");
  single->add_option("--preset", preset_name, "Preset used when no config is given")
      ->check(CLI::IsMember({"desk", "paper"}));
  add_common(single);

  auto* emit_config = app.add_subcommand("emit-config", "Write a preset experiment config");
  emit_config->add_option("--preset", preset_name, "Preset")->check(CLI::IsMember({"desk", "paper"}));
  emit_config->add_option("--out", out_path, "Output path (stdout if omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    set_threads(threads);

    if (*emit_config) {
      emit(nlohmann::json(preset(preset_name)).dump(2) + "\n", out_path);
      return 0;
    }

    if (*simulate) {
      ExperimentConfig cfg = config_path.empty() ? preset(preset_name) : load_config(config_path);
      if (seed) cfg.seed = *seed;
      if (out_path.empty()) out_path = cfg.output_path.empty() ? "results." + format : cfg.output_path;
      const MCResults results = cfg.sweep ? merge(sweep(cfg, *cfg.sweep)) : run_monte_carlo(cfg);
      const OutputFormat fmt = parse_format(format);
      write_results(results, out_path, fmt);
      if (fmt == OutputFormat::csv) {
        write_summary_csv(results, sibling(out_path, ".summary.csv"));
        if (cfg.record_samples) write_samples_csv(results, sibling(out_path, ".samples.csv"));
      }
      std::cout << "wrote " << results.cells.size() << " cells to " << out_path << " (" << results.n_failed
                << " replications excluded" << (results.flagged ? ", FLAGGED" : "") << ")\n";
      return 0;
    }

    if (*check) {
      Rng rng(derive_seed(seed.value_or(1), {0x6f}));
      const PLRInstance dgp = generate_instance(10, 5, 3.0, {}, default_discrete_eta(), NoiseDistribution::uniform(1.0), rng);
      std::vector<MomentSpec> specs;
      for (int r : {2, 3}) {
        specs.push_back(spec_for_truth(MomentKind::second_order, r, MomentMode::estimated, dgp));
        specs.push_back(spec_for_truth(MomentKind::second_order, r, MomentMode::known, dgp));
      }
      specs.push_back(MomentSpec::first_order());
      const auto rows = run_orthogonality_suite(specs, dgp, {x_points, mc_size, seed.value_or(1)});
      if (format == "json") {
        emit(nlohmann::json(rows).dump(2) + "\n", out_path);
      } else {
        emit(suite_csv(rows), out_path);
      }
      int failed = 0;
      for (const auto& row : rows)
        if ((row.in_set && row.result.verdict != Verdict::pass) ||
            (!row.in_set && row.result.verdict != Verdict::deterministic_nonzero))
          ++failed;
      std::cerr << rows.size() << " checks, " << failed << " failed\n";
      if (failed > 0) {
        std::cerr << "orthogonality check failed\n";
        return 2;
      }
      return 0;
    }

    if (*scan) {
      Rng rng(seed.value_or(1));
      const std::vector<NamedLaw> variants{{"gaussian", NoiseDistribution::gaussian(1.0)},
                                           {"discrete_default", default_discrete_eta()},
                                           {"uniform", NoiseDistribution::uniform(1.0)}};
      const auto rows = jacobian_degeneracy_scan(scan_r, variants, scan_n, rng);
      emit(format == "json" ? nlohmann::json(rows).dump(2) + "\n" : degeneracy_csv(rows), out_path);
      return 0;
    }

    if (*single) {
      ExperimentConfig cfg = config_path.empty() ? preset(preset_name) : load_config(config_path);
      if (seed) cfg.seed = *seed;
      const int s = cfg.sparsity_grid.front();
      Rng inst_rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(s), 0}));
      const PLRInstance inst = generate_instance(cfg.p, s, cfg.theta0, cfg.coeff_law, cfg.eta_dist,
                                                 NoiseDistribution::uniform(cfg.sigma_eps), inst_rng);
      Rng data_rng(derive_seed(cfg.seed, {1, static_cast<std::uint64_t>(s), 0, 0}));
      const Dataset data = generate_dataset(inst, cfg.n, data_rng);
      nlohmann::json reports = nlohmann::json::array();
      for (std::size_t m = 0; m < cfg.methods.size(); ++m) {
        Rng fold_rng(derive_seed(data_rng.seed(), {m, cfg.methods[m].seed}));
        reports.push_back(cross_fit_estimate(data, &inst, cfg.methods[m], fold_rng));
      }
      emit(reports.dump(2) + "\n", out_path);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "orthoml: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
