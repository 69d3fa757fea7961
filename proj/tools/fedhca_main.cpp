// fedhca: desk-scale simulator for hetero-client federated multi-task
// learning. Subcommands: run, baseline, verify, table.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedhca/config.hpp"
#include "fedhca/federation.hpp"
#include "fedhca/metrics.hpp"
#include "fedhca/reference_scores.hpp"
#include "fedhca/verify.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfigError = 2;

std::filesystem::path output_root() {
  if (const char* env = std::getenv("FEDHCA_OUT")) return std::filesystem::path(env);
  return std::filesystem::path("runs");
}

std::filesystem::path default_out_dir(const std::filesystem::path& config_path,
                                      const fedhca::ExperimentConfig& cfg) {
  std::string stem = config_path.stem().string();
  return output_root() / (stem + "_" + fedhca::to_string(cfg.mode) + "_seed" + std::to_string(cfg.seed));
}

struct RunArgs {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  bool dump_data = false;
};

int run_experiment_command(const RunArgs& args, bool force_local) {
  fedhca::ConfigOverrides overrides;
  overrides.seed = args.seed;
  if (force_local) {
    overrides.mode = fedhca::AggregationMode::local;
  } else if (args.mode.has_value()) {
    try {
      overrides.mode = fedhca::parse_mode(*args.mode);
    } catch (const std::exception& ex) {
      throw fedhca::ConfigError(ex.what());
    }
  }

  fedhca::ExperimentConfig cfg = fedhca::parse_config(args.config_path, overrides);
  std::filesystem::path out =
      args.out_dir.empty() ? default_out_dir(args.config_path, cfg) : std::filesystem::path(args.out_dir);

  std::cout << "mode=" << fedhca::to_string(cfg.mode) << " rounds=" << cfg.rounds
            << " clients=" << cfg.scenario.clients.size() << " seed=" << cfg.seed << "\n";

  fedhca::RoundState final_state;
  fedhca::RunResult result = fedhca::run_experiment(cfg, &final_state);
  result.config_echo = fedhca::materialize_config(cfg);

  if (cfg.mode != fedhca::AggregationMode::local) {
    fedhca::ExperimentConfig local_cfg = cfg;
    local_cfg.mode = fedhca::AggregationMode::local;
    fedhca::RunResult local_result = fedhca::run_experiment(local_cfg);
    result.final_delta_m = fedhca::delta_m_between(result, local_result);
  }

  auto files = fedhca::emit(result, out);
  if (args.dump_data) {
    auto datasets = fedhca::make_scenario(cfg.scenario);
    for (const auto& ds : datasets) {
      auto path = out / ("data_" + ds.client_id + ".csv");
      std::ofstream os(path, std::ios::binary);
      if (!os) throw std::runtime_error("cannot write " + path.string());
      fedhca::dump_dataset_csv(ds, os);
      files.push_back(path);
    }
  }
  {
    auto state_path = out / "state.json";
    fedhca::save_round_state(final_state, state_path);
    files.push_back(state_path);
  }

  for (const auto& row : result.final_metrics) {
    std::cout << "  " << row.client << "/" << row.task << " " << row.metric << "="
              << fedhca::format_double(row.value) << "\n";
  }
  if (result.final_delta_m.has_value()) {
    std::cout << "delta_m=" << std::fixed << std::setprecision(2) << *result.final_delta_m << "%\n";
  }
  std::cout << "wrote " << files.size() << " files to " << out.string() << "\n";
  return kExitOk;
}

int verify_command(const std::vector<std::string>& suites) {
  auto results = fedhca::run_verification(suites);
  if (results.empty()) {
    std::cerr << "no such suite; available: grad one_step solver attention hyper delta_m\n";
    return kExitConfigError;
  }
  bool all_ok = true;
  for (const auto& r : results) {
    std::cout << (r.passed ? "PASS" : "FAIL") << "  " << r.name << "  (" << r.detail << ")\n";
    if (!r.passed && all_ok) {
      all_ok = false;
      std::cerr << "first failing suite: " << r.name << "\n";
    }
  }
  return all_ok ? kExitOk : kExitFailure;
}

int table_command() {
  bool all_ok = true;
  for (const fedhca::ReferenceTable* table :
       {&fedhca::reference_benchmark_a(), &fedhca::reference_benchmark_b()}) {
    std::cout << table->name << "\n";
    std::cout << "  " << std::left << std::setw(10) << "method" << std::right << std::setw(12)
              << "recomputed" << std::setw(12) << "published" << "\n";
    for (const auto& row : table->rows) {
      double recomputed = fedhca::reference_delta_m(*table, row.method);
      bool ok = std::abs(recomputed - row.published_delta_m) <= 0.01;
      all_ok = all_ok && ok;
      std::cout << "  " << std::left << std::setw(10) << row.method << std::right << std::fixed
                << std::setprecision(2) << std::setw(11) << recomputed << "%" << std::setw(11)
                << row.published_delta_m << "%" << (ok ? "" : "  MISMATCH") << "\n";
    }
  }
  return all_ok ? kExitOk : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hetero-client federated multi-task learning simulator"};
  app.require_subcommand(1);

  RunArgs run_args, baseline_args;
  std::vector<std::string> suites;

  auto* run = app.add_subcommand("run", "Run a federated experiment from a config file");
  run->add_option("--config", run_args.config_path, "Experiment config (JSON)")->required();
  run->add_option("--out", run_args.out_dir, "Output directory (default: $FEDHCA_OUT or ./runs)");
  run->add_option("--seed", run_args.seed, "Override the master seed");
  run->add_option("--mode", run_args.mode, "Override the aggregation mode (local|fedavg|hca2|enc_only|dec_only)");
  run->add_flag("--dump-data", run_args.dump_data, "Also dump the generated datasets as CSV");

  auto* baseline = app.add_subcommand("baseline", "Run the local-training baseline (mode forced to local)");
  baseline->add_option("--config", baseline_args.config_path, "Experiment config (JSON)")->required();
  baseline->add_option("--out", baseline_args.out_dir, "Output directory");
  baseline->add_option("--seed", baseline_args.seed, "Override the master seed");
  baseline->add_flag("--dump-data", baseline_args.dump_data, "Also dump the generated datasets as CSV");

  auto* verify = app.add_subcommand("verify", "Run the oracle verification suites");
  verify->add_option("--suite", suites, "Run only the named suites (grad, one_step, solver, attention, hyper, delta_m)");

  auto* table = app.add_subcommand("table", "Recompute the bundled benchmark score tables");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return run_experiment_command(run_args, /*force_local=*/false);
    if (baseline->parsed()) return run_experiment_command(baseline_args, /*force_local=*/true);
    if (verify->parsed()) return verify_command(suites);
    if (table->parsed()) return table_command();
  } catch (const fedhca::ConfigError& ex) {
    std::cerr << "config error: " << ex.what() << "\n";
    return kExitConfigError;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kExitFailure;
  }
  return kExitOk;
}
