#pragma once

// Config-driven experiment harness: builds environments, trains and tests
// agents against the zero-incentive baseline, and writes the result files.

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rebal/agents.hpp"
#include "rebal/metrics.hpp"
#include "rebal/offlineopt.hpp"
#include "rebal/sim.hpp"

namespace rebal {

struct ExperimentConfig {
  std::string name = "experiment";
  std::string scenario = "vary-budget";
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};

  int rows = 3;
  int cols = 3;
  double cell_m = 500.0;
  /// South-west corner of the grid; trip coordinates are placed relative to it.
  double origin_lon = 0.0;
  double origin_lat = 0.0;

  /// Trip CSV to aggregate; empty selects the synthetic generator.
  std::string trips_csv;
  double daily_volume = 2000.0;
  int morning_peak = 8;
  int evening_peak = 18;
  double peak_sigma = 1.5;
  double floor_share = 0.2;
  double commute_fraction = 0.6;
  std::uint64_t demand_seed = 1;
  /// Draw a fresh synthetic demand per seed (otherwise one shared day).
  bool demand_per_seed = true;

  /// 0 selects round(orders * 3.65 / 20) over 20 days of the daily volume.
  int supply = 0;
  double budget = 200.0;  // per day
  std::vector<double> budgets;
  std::vector<int> supplies;
  std::vector<int> days_list;
  int days = 1;

  int slots = 24;
  int minutes_per_slot = 60;
  int window = 8;
  double p_max = 5.0;
  std::string travel = "sampled";  // sampled | same-slot
  std::string cost = "walking";    // walking | fixed-matrix

  std::vector<std::string> agents{"Random", "OPT-FIX", "DBP-UCB", "DDPG", "HRA", "HRP"};
  int train_episodes = 100;
  int test_episodes = 20;
  ActorCriticConfig learner;

  std::vector<int> horizons{1, 4, 24};
  std::int64_t ilp_node_cap = 100000;
  int cost_samples = 500;
  int generalization_areas = 5;
  bool save_checkpoints = true;
  /// 0: REBAL_WORKERS from the environment, else 1.
  int workers = 0;

  /// Throws std::invalid_argument with the offending key.
  static ExperimentConfig parse(const std::string& json_text);
  static ExperimentConfig load(const std::string& path);
  std::string to_json() const;
  void validate() const;
};

bool known_scenario(const std::string& name);
bool known_agent(const std::string& name);

/// One point of a sweep: the values that differ from the base config.
struct Setting {
  std::string label;
  double budget = 0.0;  // per day
  int supply = 0;
  int days = 1;
  int area = 0;
};

std::vector<Setting> scenario_settings(const ExperimentConfig& cfg);

/// Everything needed to simulate one (setting, seed) pair.
struct Environment {
  SimConfig sim;
  AgentSpec spec;
  /// Costs of users in region i reaching a neighbor bike, for OPT-FIX.
  std::vector<std::vector<double>> neighbor_costs;
};

Environment build_environment(const ExperimentConfig& cfg, const Setting& setting,
                              std::uint64_t seed);

/// Same-slot completion and one shared cost per (slot, i, j): the simulator
/// run on this configuration never serves more than the offline optimum.
IlpInstance matched_instance(const Environment& env);

struct EpisodeStats {
  int served = 0;
  int unserved = 0;
  int requests = 0;
  double spent = 0.0;
  double kl = 0.0;
  /// Mean over the episode's training steps; NaN when nothing was trained.
  double critic_loss = 0.0;
  double mean_q = 0.0;
  std::int64_t train_steps = 0;
};

EpisodeStats run_episode(Simulator& sim, PricingAgent& agent, std::uint64_t sim_seed,
                         int episode, bool training);

/// Simulator seeds shared by every agent of one (setting, seed).
std::uint64_t train_episode_seed(std::uint64_t seed, int episode);
std::uint64_t test_episode_seed(std::uint64_t seed, int episode);

struct BaselineSummary {
  std::vector<std::int64_t> unserved;  // per test episode
  std::vector<double> kl;
  std::int64_t unserved_total = 0;
  double kl_mean = 0.0;
  /// Per region, users without a local bike in one training-seed run.
  std::vector<double> no_local_bike;
};

BaselineSummary evaluate_baseline(const Environment& env, const ExperimentConfig& cfg,
                                  std::uint64_t seed);

std::unique_ptr<PricingAgent> make_agent(const std::string& name, const Environment& env,
                                         const ExperimentConfig& cfg,
                                         const BaselineSummary& baseline, std::uint64_t seed);

struct ResultRow {
  std::string scenario;
  std::string setting;
  std::uint64_t seed = 0;
  std::string agent;
  int test_episodes = 0;
  double served = 0.0;  // mean per test episode
  double served_max = 0.0;
  double unserved = 0.0;
  double baseline_unserved = 0.0;
  double dur = 0.0;  // percent, over the pooled test episodes
  double kl = 0.0;   // nats, mean over test episodes
  double baseline_kl = 0.0;
  double spent = 0.0;
  double final_loss = 0.0;  // mean over the last 10 training episodes, NaN if none
};

struct AgentRun {
  ResultRow row;
  std::vector<EpisodeStats> train;
  std::vector<EpisodeStats> test;
  double train_seconds = 0.0;
  double test_seconds = 0.0;
  std::unique_ptr<PricingAgent> agent;
};

/// Trains `agent` for cfg.train_episodes on `env`, then tests it without
/// exploration or learning on the baseline's test seeds.
AgentRun train_and_test(std::unique_ptr<PricingAgent> agent, const Environment& env,
                        const ExperimentConfig& cfg, const BaselineSummary& baseline,
                        std::uint64_t seed);

/// Test-only pass of an already trained agent on another environment.
AgentRun test_only(PricingAgent& agent, const Environment& env, const ExperimentConfig& cfg,
                   const BaselineSummary& baseline, std::uint64_t seed);

struct LossPoint {
  std::string setting;
  std::uint64_t seed = 0;
  std::string agent;
  int episode = 0;
  double critic_loss = 0.0;
  double mean_q = 0.0;
  int served = 0;
};

struct Timing {
  std::string setting;
  std::uint64_t seed = 0;
  std::string agent;
  double train_seconds = 0.0;
  double test_seconds = 0.0;
};

struct ExperimentResults {
  ExperimentConfig config;
  std::vector<ResultRow> rows;
  std::vector<LossPoint> losses;
  std::vector<Timing> timings;
  std::vector<std::string> diagnostics;  // JSON lines
};

/// Runs the configured scenario. With `checkpoint_dir` set, trained
/// actor-critic agents are saved there.
ExperimentResults run_experiment(const ExperimentConfig& cfg,
                                 const std::optional<std::string>& checkpoint_dir = std::nullopt);

/// results.csv, loss_curves.csv, timings.csv, diagnostics.jsonl,
/// summary.json, config.json and, for generalization, dur_cdf.csv.
void write_results(const ExperimentResults& results, const std::string& dir);

std::string results_csv(const std::vector<ResultRow>& rows);
std::vector<ResultRow> read_results_csv(const std::string& path);
std::string summary_json(const ExperimentResults& results);
/// Plain-text table of per-(setting, agent) means.
std::string report_table(const std::vector<ResultRow>& rows);

int worker_count(const ExperimentConfig& cfg);

}  // namespace rebal
