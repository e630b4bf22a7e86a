#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "rebal/experiment.hpp"
#include "rebal/offlineopt.hpp"

using namespace rebal;

int main(int argc, char** argv) {
  CLI::App app{"Incentive-based bike rebalancing experiments"};
  app.require_subcommand(1);

  std::string run_config, out_dir;
  auto* run = app.add_subcommand("run", "Run the experiment described by a config file");
  run->add_option("config", run_config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("-o,--out", out_dir, "Results directory (default: results/<name>)");

  std::string validate_config;
  auto* validate = app.add_subcommand("validate", "Check a config file without running it");
  validate->add_option("config", validate_config, "Experiment config (JSON)")
      ->required()
      ->check(CLI::ExistingFile);

  std::string report_dir;
  auto* report = app.add_subcommand("report", "Summarize a results directory");
  report->add_option("results", report_dir, "Results directory")->required()->check(CLI::ExistingDirectory);

  std::string ilp_file;
  int ilp_v = 0;
  auto* ilp = app.add_subcommand("ilp", "Solve an offline assignment instance (JSON)");
  ilp->add_option("instance", ilp_file, "Instance file")->required()->check(CLI::ExistingFile);
  ilp->add_option("-V,--horizon", ilp_v, "Rolling window length in slots (0: whole horizon)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      const auto cfg = ExperimentConfig::load(run_config);
      if (out_dir.empty()) out_dir = "results/" + cfg.name;
      std::cerr << "running " << cfg.scenario << " (" << cfg.seeds.size() << " seeds, "
                << worker_count(cfg) << " workers) -> " << out_dir << "\n";
      const auto results = run_experiment(cfg, out_dir + "/checkpoints");
      write_results(results, out_dir);
      std::cout << report_table(results.rows);
    } else if (*validate) {
      const auto cfg = ExperimentConfig::load(validate_config);
      const auto settings = scenario_settings(cfg);
      std::cout << "ok: scenario " << cfg.scenario << ", " << settings.size() << " settings x "
                << cfg.seeds.size() << " seeds x " << cfg.agents.size() << " agents\n";
    } else if (*report) {
      const auto rows = read_results_csv(report_dir + "/results.csv");
      std::cout << report_table(rows);
    } else if (*ilp) {
      std::ifstream in(ilp_file);
      const auto inst = read_instance_json(in);
      const auto h = v_horizon_optimize(inst, ilp_v > 0 ? ilp_v : inst.slots);
      std::cout << "served " << h.served << " spent " << h.spent << " exact "
                << (h.exact ? "yes" : "no") << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
