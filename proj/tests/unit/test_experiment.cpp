#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "rebal/experiment.hpp"

using namespace rebal;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny(const std::string& scenario) {
  ExperimentConfig c;
  c.name = "tiny";
  c.scenario = scenario;
  c.seeds = {1, 2};
  c.daily_volume = 300;
  c.supply = 30;
  c.budget = 40;
  c.budgets = {0, 40};
  c.agents = {"Random", "OPT-FIX", "DBP-UCB", "HRP"};
  c.train_episodes = 2;
  c.test_episodes = 2;
  c.save_checkpoints = false;
  c.learner.warmup = 24;
  c.learner.batch_size = 8;
  c.learner.actor_hidden = 8;
  c.learner.critic_hidden = 8;
  c.learner.gru_hidden = 4;
  c.learner.head_hidden = 4;
  c.learner.local_hidden = 4;
  c.horizons = {1, 24};
  c.cost_samples = 50;
  return c;
}

bool rejects(const std::string& json, const std::string& needle) {
  try {
    ExperimentConfig::parse(json);
  } catch (const std::invalid_argument& e) {
    return std::string(e.what()).find(needle) != std::string::npos;
  }
  return false;
}

}  // namespace

TEST(ExperimentConfig, DefaultsMatchTheStudySetup) {
  const auto c = ExperimentConfig::parse(R"({"scenario": "loss-curve"})");
  EXPECT_EQ(c.slots, 24);
  EXPECT_EQ(c.minutes_per_slot, 60);
  EXPECT_EQ(c.window, 8);
  EXPECT_DOUBLE_EQ(c.learner.gamma, 0.99);
  EXPECT_EQ(c.train_episodes, 100);
  EXPECT_EQ(c.test_episodes, 20);
}

TEST(ExperimentConfig, RejectsUnknownKeysAndBadValues) {
  EXPECT_TRUE(rejects(R"({"bugdet": 10})", "bugdet"));
  EXPECT_TRUE(rejects(R"({"learner": {"gama": 0.9}})", "gama"));
  EXPECT_TRUE(rejects(R"({"scenario": "nope"})", "nope"));
  EXPECT_TRUE(rejects(R"({"agents": ["HRP", "PPO"]})", "PPO"));
  EXPECT_TRUE(rejects(R"({"scenario": "vary-budget", "budgets": []})", "budgets"));
  EXPECT_TRUE(rejects(R"({"budget": "lots"})", "budget"));
  EXPECT_THROW(ExperimentConfig::parse("{not json"), std::invalid_argument);
  EXPECT_THROW(ExperimentConfig::load("/nonexistent/config.json"), std::exception);
}

TEST(ExperimentConfig, JsonRoundTrip) {
  const ExperimentConfig c = tiny("vary-budget");
  const auto back = ExperimentConfig::parse(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
}

TEST(Experiment, SettingsFollowTheScenario) {
  auto c = tiny("long-term");
  c.days_list = {1, 3};
  const auto settings = scenario_settings(c);
  ASSERT_EQ(settings.size(), 2u);
  EXPECT_EQ(settings[1].days, 3);
  // The budget is per day.
  const Environment env = build_environment(c, settings[1], 1);
  EXPECT_DOUBLE_EQ(env.sim.budget, 3 * c.budget);
  EXPECT_EQ(env.sim.days, 3);
}

TEST(Experiment, EpisodeSeedStreamsAreDisjoint) {
  for (int e = 0; e < 50; ++e)
    for (int f = 0; f < 50; ++f) EXPECT_NE(train_episode_seed(7, e), test_episode_seed(7, f));
}

TEST(Experiment, ZeroBudgetGivesZeroDur) {
  auto c = tiny("vary-budget");
  c.budgets = {0};
  const auto res = run_experiment(c);
  ASSERT_EQ(res.rows.size(), c.seeds.size() * c.agents.size());
  for (const auto& r : res.rows) {
    EXPECT_DOUBLE_EQ(r.dur, 0.0) << r.agent;
    EXPECT_DOUBLE_EQ(r.spent, 0.0) << r.agent;
    EXPECT_DOUBLE_EQ(r.unserved, r.baseline_unserved) << r.agent;
  }
}

TEST(Experiment, ResultsAreDeterministicAndRoundTrip) {
  auto c = tiny("vary-budget");
  c.workers = 1;
  const auto a = run_experiment(c);
  c.workers = 2;
  const auto b = run_experiment(c);
  EXPECT_EQ(results_csv(a.rows), results_csv(b.rows));

  const fs::path dir = fs::temp_directory_path() / "rebal_results_roundtrip";
  fs::remove_all(dir);
  write_results(a, dir.string());
  for (const char* f : {"results.csv", "summary.json", "loss_curves.csv", "config.json"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  const auto rows = read_results_csv((dir / "results.csv").string());
  EXPECT_EQ(results_csv(rows), results_csv(a.rows));
  fs::remove_all(dir);
}

TEST(Experiment, MatchedInstanceBoundsEveryEpisode) {
  auto c = tiny("optimality");
  c.seeds = {3};
  c.agents = {"Random", "OPT-FIX"};
  const auto res = run_experiment(c);
  double v24 = -1.0;
  for (const auto& r : res.rows)
    if (r.agent == "ILP-V24") v24 = r.served;
  ASSERT_GE(v24, 0.0) << "V=24 solve was not exact";
  for (const auto& r : res.rows) EXPECT_LE(r.served_max, v24) << r.agent;
}

TEST(Experiment, TripFileDemandIsAveragedPerWeekday) {
  const fs::path csv = fs::temp_directory_path() / "rebal_trips.csv";
  {
    std::ofstream out(csv);
    out << "order_id,bike_id,user_id,start_time,start_lng,start_lat,end_time,end_lng,end_lat\n";
    // About 85 m east and 110 m north of the origin, ending two cells north.
    const char* row = ",116.301,39.901,";
    const char* end = ",116.301,39.911\n";
    out << "1,1,1,2024-01-01 08:30:00" << row << "2024-01-01 08:45:00" << end;
    out << "2,2,2,2024-01-01 08:31:00" << row << "2024-01-01 08:50:00" << end;
    out << "3,3,3,2024-01-02 08:10:00" << row << "2024-01-02 08:30:00" << end;
    out << "4,4,4,2024-01-02 08:20:00" << row << "2024-01-02 08:40:00" << end;
    out << "5,5,5,2024-01-06 08:20:00" << row << "2024-01-06 08:40:00" << end;  // Saturday
  }
  auto c = tiny("loss-curve");
  c.trips_csv = csv.string();
  c.origin_lon = 116.3;
  c.origin_lat = 39.9;
  const Environment env = build_environment(c, scenario_settings(c).front(), 1);
  EXPECT_EQ(env.sim.demand.at(8, 0, 6), 2);
  EXPECT_EQ(env.sim.demand.total(), 2);
  fs::remove(csv);
}
