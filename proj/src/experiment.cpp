#include "rebal/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "rebal/ingest.hpp"

namespace rebal {

using nlohmann::json;

namespace {

const std::vector<std::string> kScenarios = {"loss-curve", "vary-budget",  "vary-supply",
                                             "long-term",  "optimality",   "generalization"};
// Fixed order: an agent's random stream does not depend on which others run.
const std::vector<std::string> kAgents = {"Zero", "Random", "OPT-FIX", "DBP-UCB",
                                          "DDPG", "HRA",    "HRP"};

constexpr std::uint64_t kTrainStream = 0x7261696eULL;
constexpr std::uint64_t kTestStream = 0x74657374ULL;
constexpr std::uint64_t kWarmupStream = 0x7761726dULL;
// Guards against a warm-up that can never fill the buffer.
constexpr int kMaxWarmupEpisodes = 100000;

int agent_stream(const std::string& name) {
  const auto it = std::find(kAgents.begin(), kAgents.end(), name);
  return static_cast<int>(it - kAgents.begin());
}

template <typename T>
void read_key(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config key '") + key + "': " + e.what());
  }
}

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key)) throw std::invalid_argument("unknown config key '" + where + key + "'");
}

const std::set<std::string> kLearnerKeys = {
    "gamma",        "tau",           "actor_lr",     "critic_lr",   "clip_norm",
    "batch_size",   "buffer_capacity", "warmup",     "actor_hidden", "critic_hidden",
    "gru_hidden",   "head_hidden",   "local_hidden", "noise_start", "noise_end",
    "noise_anneal_episodes", "bootstrap_terminal", "reward_scale", "final_layer_init",
    "updates_per_step", "actor_delay", "critic_pretrain_steps"};

const std::set<std::string> kTopKeys = {
    "name",          "scenario",        "seeds",          "rows",          "cols",
    "cell_m",        "origin_lon",      "origin_lat",     "trips_csv",       "daily_volume",   "morning_peak",  "evening_peak",
    "peak_sigma",    "floor_share",     "commute_fraction", "demand_seed", "demand_per_seed",
    "supply",        "budget",          "budgets",        "supplies",      "days_list",
    "days",          "slots",           "minutes_per_slot", "window",      "p_max",
    "travel",        "cost",            "agents",         "train_episodes", "test_episodes",
    "learner",       "horizons",        "ilp_node_cap",   "cost_samples",
    "generalization_areas", "save_checkpoints", "workers"};

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string fmt_label(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::nan("");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double stddev_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

// ------------------------------------------------------------------ config

ExperimentConfig ExperimentConfig::parse(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
  reject_unknown(j, kTopKeys, "");
  ExperimentConfig c;
  read_key(j, "name", c.name);
  read_key(j, "scenario", c.scenario);
  read_key(j, "seeds", c.seeds);
  read_key(j, "rows", c.rows);
  read_key(j, "cols", c.cols);
  read_key(j, "cell_m", c.cell_m);
  read_key(j, "origin_lon", c.origin_lon);
  read_key(j, "origin_lat", c.origin_lat);
  read_key(j, "trips_csv", c.trips_csv);
  read_key(j, "daily_volume", c.daily_volume);
  read_key(j, "morning_peak", c.morning_peak);
  read_key(j, "evening_peak", c.evening_peak);
  read_key(j, "peak_sigma", c.peak_sigma);
  read_key(j, "floor_share", c.floor_share);
  read_key(j, "commute_fraction", c.commute_fraction);
  read_key(j, "demand_seed", c.demand_seed);
  read_key(j, "demand_per_seed", c.demand_per_seed);
  read_key(j, "supply", c.supply);
  read_key(j, "budget", c.budget);
  read_key(j, "budgets", c.budgets);
  read_key(j, "supplies", c.supplies);
  read_key(j, "days_list", c.days_list);
  read_key(j, "days", c.days);
  read_key(j, "slots", c.slots);
  read_key(j, "minutes_per_slot", c.minutes_per_slot);
  read_key(j, "window", c.window);
  read_key(j, "p_max", c.p_max);
  read_key(j, "travel", c.travel);
  read_key(j, "cost", c.cost);
  read_key(j, "agents", c.agents);
  read_key(j, "train_episodes", c.train_episodes);
  read_key(j, "test_episodes", c.test_episodes);
  read_key(j, "horizons", c.horizons);
  read_key(j, "ilp_node_cap", c.ilp_node_cap);
  read_key(j, "cost_samples", c.cost_samples);
  read_key(j, "generalization_areas", c.generalization_areas);
  read_key(j, "save_checkpoints", c.save_checkpoints);
  read_key(j, "workers", c.workers);
  if (j.contains("learner")) {
    const json& l = j.at("learner");
    if (!l.is_object()) throw std::invalid_argument("config key 'learner' must be an object");
    reject_unknown(l, kLearnerKeys, "learner.");
    auto& a = c.learner;
    read_key(l, "gamma", a.gamma);
    read_key(l, "tau", a.tau);
    read_key(l, "actor_lr", a.actor_lr);
    read_key(l, "critic_lr", a.critic_lr);
    read_key(l, "clip_norm", a.clip_norm);
    read_key(l, "batch_size", a.batch_size);
    read_key(l, "buffer_capacity", a.buffer_capacity);
    read_key(l, "warmup", a.warmup);
    read_key(l, "actor_hidden", a.actor_hidden);
    read_key(l, "critic_hidden", a.critic_hidden);
    read_key(l, "gru_hidden", a.gru_hidden);
    read_key(l, "head_hidden", a.head_hidden);
    read_key(l, "local_hidden", a.local_hidden);
    read_key(l, "noise_start", a.noise_start);
    read_key(l, "noise_end", a.noise_end);
    read_key(l, "noise_anneal_episodes", a.noise_anneal_episodes);
    read_key(l, "final_layer_init", a.final_layer_init);
    read_key(l, "updates_per_step", a.updates_per_step);
    read_key(l, "actor_delay", a.actor_delay);
    read_key(l, "critic_pretrain_steps", a.critic_pretrain_steps);
    read_key(l, "bootstrap_terminal", a.bootstrap_terminal);
    read_key(l, "reward_scale", a.reward_scale);
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string ExperimentConfig::to_json() const {
  json j;
  j["name"] = name;
  j["scenario"] = scenario;
  j["seeds"] = seeds;
  j["rows"] = rows;
  j["cols"] = cols;
  j["cell_m"] = cell_m;
  j["origin_lon"] = origin_lon;
  j["origin_lat"] = origin_lat;
  j["trips_csv"] = trips_csv;
  j["daily_volume"] = daily_volume;
  j["morning_peak"] = morning_peak;
  j["evening_peak"] = evening_peak;
  j["peak_sigma"] = peak_sigma;
  j["floor_share"] = floor_share;
  j["commute_fraction"] = commute_fraction;
  j["demand_seed"] = demand_seed;
  j["demand_per_seed"] = demand_per_seed;
  j["supply"] = supply;
  j["budget"] = budget;
  j["budgets"] = budgets;
  j["supplies"] = supplies;
  j["days_list"] = days_list;
  j["days"] = days;
  j["slots"] = slots;
  j["minutes_per_slot"] = minutes_per_slot;
  j["window"] = window;
  j["p_max"] = p_max;
  j["travel"] = travel;
  j["cost"] = cost;
  j["agents"] = agents;
  j["train_episodes"] = train_episodes;
  j["test_episodes"] = test_episodes;
  j["horizons"] = horizons;
  j["ilp_node_cap"] = ilp_node_cap;
  j["cost_samples"] = cost_samples;
  j["generalization_areas"] = generalization_areas;
  j["save_checkpoints"] = save_checkpoints;
  j["workers"] = workers;
  const auto& a = learner;
  j["learner"] = {{"gamma", a.gamma},
                  {"tau", a.tau},
                  {"actor_lr", a.actor_lr},
                  {"critic_lr", a.critic_lr},
                  {"clip_norm", a.clip_norm},
                  {"batch_size", a.batch_size},
                  {"buffer_capacity", a.buffer_capacity},
                  {"warmup", a.warmup},
                  {"actor_hidden", a.actor_hidden},
                  {"critic_hidden", a.critic_hidden},
                  {"gru_hidden", a.gru_hidden},
                  {"head_hidden", a.head_hidden},
                  {"local_hidden", a.local_hidden},
                  {"noise_start", a.noise_start},
                  {"noise_end", a.noise_end},
                  {"noise_anneal_episodes", a.noise_anneal_episodes},
                  {"final_layer_init", a.final_layer_init},
                  {"updates_per_step", a.updates_per_step},
                  {"actor_delay", a.actor_delay},
                  {"critic_pretrain_steps", a.critic_pretrain_steps},
                  {"bootstrap_terminal", a.bootstrap_terminal},
                  {"reward_scale", a.reward_scale}};
  return j.dump(2) + "\n";
}

bool known_scenario(const std::string& name) {
  return std::find(kScenarios.begin(), kScenarios.end(), name) != kScenarios.end();
}

bool known_agent(const std::string& name) {
  return std::find(kAgents.begin(), kAgents.end(), name) != kAgents.end();
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument(msg); };
  if (!known_scenario(scenario)) fail("unknown scenario '" + scenario + "'");
  if (seeds.empty()) fail("seeds must not be empty");
  if (rows < 1 || cols < 1 || !(cell_m > 0.0)) fail("grid needs rows, cols >= 1 and cell_m > 0");
  if (trips_csv.empty() && !(daily_volume > 0.0)) fail("daily_volume must be > 0");
  if (slots < 1 || minutes_per_slot < 1) fail("slots and minutes_per_slot must be >= 1");
  if (morning_peak < 0 || morning_peak >= slots || evening_peak < 0 || evening_peak >= slots)
    fail("peak slots must lie in [0, slots)");
  if (!(peak_sigma > 0.0)) fail("peak_sigma must be > 0");
  if (floor_share < 0.0 || floor_share > 1.0) fail("floor_share must be in [0, 1]");
  if (commute_fraction < 0.0 || commute_fraction > 1.0) fail("commute_fraction must be in [0, 1]");
  if (supply < 0) fail("supply must be >= 0");
  if (!(budget >= 0.0)) fail("budget must be >= 0");
  if (days < 1) fail("days must be >= 1");
  if (window < 1) fail("window must be >= 1");
  if (!(p_max > 0.0)) fail("p_max must be > 0");
  if (travel != "sampled" && travel != "same-slot") fail("travel must be sampled or same-slot");
  if (cost != "walking" && cost != "fixed-matrix") fail("cost must be walking or fixed-matrix");
  if (agents.empty()) fail("agents must not be empty");
  for (const auto& a : agents)
    if (!known_agent(a)) fail("unknown agent '" + a + "'");
  if (train_episodes < 0 || test_episodes < 1)
    fail("train_episodes must be >= 0 and test_episodes >= 1");
  if (cost_samples < 1) fail("cost_samples must be >= 1");
  if (ilp_node_cap < 1) fail("ilp_node_cap must be >= 1");
  if (workers < 0) fail("workers must be >= 0");
  if (learner.batch_size < 1 || learner.buffer_capacity < 1)
    fail("learner batch_size and buffer_capacity must be >= 1");
  if (learner.updates_per_step < 1 || learner.actor_delay < 1 || learner.critic_pretrain_steps < 0)
    fail("learner updates_per_step and actor_delay must be >= 1, critic_pretrain_steps >= 0");
  if (scenario == "vary-budget") {
    if (budgets.empty()) fail("vary-budget needs budgets");
    for (double b : budgets)
      if (!(b >= 0.0)) fail("budgets must be >= 0");
  }
  if (scenario == "vary-supply") {
    if (supplies.empty()) fail("vary-supply needs supplies");
    for (int s : supplies)
      if (s < 0) fail("supplies must be >= 0");
  }
  if (scenario == "long-term") {
    if (days_list.empty()) fail("long-term needs days_list");
    for (int d : days_list)
      if (d < 1) fail("days_list entries must be >= 1");
  }
  if (scenario == "optimality") {
    if (horizons.empty()) fail("optimality needs horizons");
    for (int v : horizons)
      if (v < 1) fail("horizons must be >= 1");
    if (days != 1) fail("optimality runs one-day episodes");
  }
  if (scenario == "generalization" && generalization_areas < 1)
    fail("generalization_areas must be >= 1");
}

// ---------------------------------------------------------------- settings

std::vector<Setting> scenario_settings(const ExperimentConfig& cfg) {
  const int base_supply =
      cfg.supply > 0 ? cfg.supply
                     : static_cast<int>(default_total_supply(
                           static_cast<std::int64_t>(std::llround(cfg.daily_volume * 20.0))));
  const Setting base{"budget=" + fmt_label(cfg.budget), cfg.budget, base_supply, cfg.days, 0};
  std::vector<Setting> out;
  if (cfg.scenario == "vary-budget") {
    for (double b : cfg.budgets) {
      Setting s = base;
      s.budget = b;
      s.label = "budget=" + fmt_label(b);
      out.push_back(s);
    }
  } else if (cfg.scenario == "vary-supply") {
    for (int v : cfg.supplies) {
      Setting s = base;
      s.supply = v;
      s.label = "supply=" + std::to_string(v);
      out.push_back(s);
    }
  } else if (cfg.scenario == "long-term") {
    for (int d : cfg.days_list) {
      Setting s = base;
      s.days = d;
      s.label = "days=" + std::to_string(d);
      out.push_back(s);
    }
  } else if (cfg.scenario == "generalization") {
    for (int a = 0; a <= cfg.generalization_areas; ++a) {
      Setting s = base;
      s.area = a;
      s.label = "area=" + std::to_string(a);
      out.push_back(s);
    }
  } else {
    out.push_back(base);
  }
  return out;
}

// ------------------------------------------------------------ environment

namespace {

struct TripData {
  DemandTensor demand;
  TravelTimeModel durations;
  std::vector<std::vector<LocalPoint>> pool;
};

TripData load_trip_demand(const ExperimentConfig& cfg, const RegionGrid& grid) {
  const auto parsed = parse_trajectories(cfg.trips_csv, grid);
  const auto week = aggregate_weekday_demand(parsed.trips, grid, cfg.slots);
  TripData out;
  out.demand = DemandTensor(cfg.slots, grid.size());
  const double days = std::max(1, week.weekdays_seen);
  for (int t = 0; t < cfg.slots; ++t)
    for (int i = 0; i < grid.size(); ++i)
      for (int l = 0; l < grid.size(); ++l)
        out.demand.at(t, i, l) =
            static_cast<int>(std::llround(week.demand.at(t, i, l) / days));
  out.durations = week.durations;
  out.pool = location_pool_from_trips(parsed.trips, grid);
  return out;
}

}  // namespace

Environment build_environment(const ExperimentConfig& cfg, const Setting& setting,
                              std::uint64_t seed) {
  Environment env;
  SimConfig& sim = env.sim;
  sim.grid = RegionGrid(cfg.rows, cfg.cols, cfg.cell_m, cfg.cell_m,
                        LonLat{cfg.origin_lon, cfg.origin_lat});
  const int n = sim.grid.size();
  std::vector<std::vector<LocalPoint>> pool;
  if (!cfg.trips_csv.empty()) {
    auto trips = load_trip_demand(cfg, sim.grid);
    sim.demand = std::move(trips.demand);
    sim.travel = std::move(trips.durations);
    pool = std::move(trips.pool);
    for (int i = 0; i < n; ++i)
      if (pool[i].empty()) pool[i] = uniform_location_pool(sim.grid, 64, mix_seed(seed, 5))[i];
  } else {
    SyntheticDemandParams p;
    p.regions = n;
    p.slots = cfg.slots;
    p.daily_volume = cfg.daily_volume;
    p.peak_slots = {cfg.morning_peak, cfg.evening_peak};
    p.peak_sigma = cfg.peak_sigma;
    p.floor_share = cfg.floor_share;
    p.commute_fraction = cfg.commute_fraction;
    p.seed = cfg.demand_per_seed ? mix_seed(cfg.demand_seed, seed) : cfg.demand_seed;
    if (setting.area > 0) p.seed = mix_seed(p.seed, 1000 + static_cast<std::uint64_t>(setting.area));
    sim.demand = synthesize_demand(p).demand;
    sim.travel = TravelTimeModel(sim.grid);
    pool = uniform_location_pool(sim.grid, 64, mix_seed(seed, 5));
  }
  sim.location_pool = pool;
  sim.total_supply = setting.supply;
  sim.days = setting.days;
  sim.budget = setting.budget * setting.days;
  sim.minutes_per_slot = cfg.minutes_per_slot;
  sim.window = cfg.window;
  sim.p_max = cfg.p_max;

  const bool matched = cfg.scenario == "optimality";
  sim.travel_mode = matched || cfg.travel == "same-slot" ? TravelMode::kSameSlot
                                                         : TravelMode::kSampled;
  sim.cost_mode = matched || cfg.cost == "fixed-matrix" ? CostMode::kFixedMatrix
                                                        : CostMode::kWalking;
  const double alpha = sim.effective_alpha();
  const auto samples = monte_carlo_cost_samples(sim.grid, pool, alpha, cfg.cost_samples,
                                                cfg.slots, mix_seed(seed, 11));
  std::vector<std::vector<int>> neighbors;
  for (int i = 0; i < n; ++i) neighbors.push_back(sim.grid.neighbors(i));
  env.neighbor_costs.assign(static_cast<std::size_t>(n), {});
  if (sim.cost_mode == CostMode::kFixedMatrix) {
    sim.pair_costs = sample_costs(samples, neighbors, mix_seed(seed, 12));
    for (int t = 0; t < cfg.slots; ++t)
      for (int i = 0; i < n; ++i)
        for (int j : neighbors[i]) env.neighbor_costs[i].push_back(sim.pair_costs.at(t, i, j));
  } else {
    for (int i = 0; i < n; ++i)
      for (int j : neighbors[i]) {
        const auto& src = samples.pooled[static_cast<std::size_t>(i) * n + j];
        env.neighbor_costs[i].insert(env.neighbor_costs[i].end(), src.begin(), src.end());
      }
  }
  sim.validate();

  AgentSpec& spec = env.spec;
  spec.grid = sim.grid;
  spec.window = cfg.window;
  spec.slots_per_episode = sim.episode_steps();
  spec.p_max = cfg.p_max;
  spec.budget = sim.budget;
  spec.total_supply = sim.total_supply;
  spec.mean_slot_requests =
      std::max(1.0, static_cast<double>(sim.demand.total()) / sim.demand.slots());
  return env;
}

IlpInstance matched_instance(const Environment& env) {
  const SimConfig& sim = env.sim;
  if (sim.cost_mode != CostMode::kFixedMatrix || sim.travel_mode != TravelMode::kSameSlot ||
      sim.days != 1)
    throw std::invalid_argument("matched_instance: needs same-slot, fixed-cost, one-day config");
  return IlpInstance::from_grid(sim.grid, sim.demand,
                                initial_bike_counts(sim.total_supply, sim.demand),
                                sim.pair_costs, sim.budget);
}

// ----------------------------------------------------------------- running

std::uint64_t train_episode_seed(std::uint64_t seed, int episode) {
  return mix_seed(mix_seed(seed, kTrainStream), static_cast<std::uint64_t>(episode));
}

std::uint64_t test_episode_seed(std::uint64_t seed, int episode) {
  return mix_seed(mix_seed(seed, kTestStream), static_cast<std::uint64_t>(episode));
}

EpisodeStats run_episode(Simulator& sim, PricingAgent& agent, std::uint64_t sim_seed,
                         int episode, bool training) {
  EpisodeStats stats;
  Observation obs = sim.reset(sim_seed);
  agent.begin_episode(episode, training);
  auto* learner = dynamic_cast<ActorCriticAgent*>(&agent);
  if (learner) learner->clear_diagnostics();
  while (!sim.done()) {
    const PriceAction action = agent.act(obs);
    StepOutcome out = sim.step(action);
    agent.observe(obs, action, out);
    stats.served += out.reward;
    stats.requests += out.requests;
    obs = std::move(out.next_observation);
  }
  stats.unserved = stats.requests - stats.served;
  stats.spent = sim.log().spent_total();
  try {
    stats.kl = episode_kl(sim.log());
  } catch (const std::invalid_argument&) {
    stats.kl = 0.0;
  }
  stats.critic_loss = std::nan("");
  stats.mean_q = std::nan("");
  if (learner && !learner->diagnostics().empty()) {
    double loss = 0.0, q = 0.0;
    for (const auto& d : learner->diagnostics()) {
      loss += d.critic_loss;
      q += d.mean_q;
    }
    const double k = static_cast<double>(learner->diagnostics().size());
    stats.critic_loss = loss / k;
    stats.mean_q = q / k;
    stats.train_steps = static_cast<std::int64_t>(learner->diagnostics().size());
  }
  return stats;
}

BaselineSummary evaluate_baseline(const Environment& env, const ExperimentConfig& cfg,
                                  std::uint64_t seed) {
  BaselineSummary out;
  for (int e = 0; e < cfg.test_episodes; ++e) {
    const auto run = baseline_run(env.sim, test_episode_seed(seed, e));
    out.unserved.push_back(run.unservice);
    out.kl.push_back(run.kl);
    out.unserved_total += run.unservice;
  }
  out.kl_mean = mean_of(out.kl);
  const auto probe = baseline_run(env.sim, train_episode_seed(seed, 0));
  out.no_local_bike.assign(probe.no_local_bike.begin(), probe.no_local_bike.end());
  return out;
}

std::unique_ptr<PricingAgent> make_agent(const std::string& name, const Environment& env,
                                         const ExperimentConfig& cfg,
                                         const BaselineSummary& baseline, std::uint64_t seed) {
  const int n = env.spec.regions();
  const std::uint64_t stream = mix_seed(seed, 100 + static_cast<std::uint64_t>(agent_stream(name)));
  if (name == "Zero") return std::make_unique<ZeroPricer>(n);
  if (name == "Random") return std::make_unique<RandomPricer>(n, cfg.p_max, stream);
  if (name == "OPT-FIX") {
    std::vector<double> demand(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
      demand[i] = static_cast<double>(env.sim.demand.region_total(i)) * env.sim.days;
    return std::make_unique<OptFixPricer>(OptFixPricer::calibrate(
        env.neighbor_costs, env.spec.budget, demand, baseline.no_local_bike));
  }
  if (name == "DBP-UCB")
    return std::make_unique<DbpUcbPricer>(n, env.spec.slots_per_episode, cfg.p_max);
  ActorCriticConfig ac = cfg.learner;
  ac.seed = stream;
  ac.noise_anneal_episodes = std::max(1, std::min(ac.noise_anneal_episodes, cfg.train_episodes));
  if (name == "DDPG") return make_ddpg(env.spec, ac);
  if (name == "HRA") return make_hra(env.spec, ac);
  if (name == "HRP") return make_hrp(env.spec, ac);
  throw std::invalid_argument("unknown agent '" + name + "'");
}

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void summarize_test(AgentRun& run, const BaselineSummary& baseline) {
  std::int64_t unserved = 0;
  double served = 0.0, spent = 0.0, kl = 0.0, served_max = 0.0;
  for (const auto& s : run.test) {
    unserved += s.unserved;
    served += s.served;
    served_max = std::max(served_max, static_cast<double>(s.served));
    spent += s.spent;
    kl += s.kl;
  }
  const double k = static_cast<double>(run.test.size());
  ResultRow& r = run.row;
  r.test_episodes = static_cast<int>(run.test.size());
  r.served = served / k;
  r.served_max = served_max;
  r.unserved = static_cast<double>(unserved) / k;
  r.spent = spent / k;
  r.kl = kl / k;
  r.baseline_unserved = static_cast<double>(baseline.unserved_total) / k;
  r.baseline_kl = baseline.kl_mean;
  r.dur = baseline.unserved_total > 0 ? dur(baseline.unserved_total, unserved) : 0.0;
}

}  // namespace

AgentRun test_only(PricingAgent& agent, const Environment& env, const ExperimentConfig& cfg,
                   const BaselineSummary& baseline, std::uint64_t seed) {
  AgentRun run;
  Simulator sim(env.sim);
  const auto t0 = std::chrono::steady_clock::now();
  for (int e = 0; e < cfg.test_episodes; ++e)
    run.test.push_back(run_episode(sim, agent, test_episode_seed(seed, e), e, false));
  run.test_seconds = seconds_since(t0);
  run.row.agent = agent.name();
  run.row.seed = seed;
  run.row.final_loss = std::nan("");
  summarize_test(run, baseline);
  return run;
}

AgentRun train_and_test(std::unique_ptr<PricingAgent> agent, const Environment& env,
                        const ExperimentConfig& cfg, const BaselineSummary& baseline,
                        std::uint64_t seed) {
  Simulator sim(env.sim);
  std::vector<EpisodeStats> train;
  const auto t0 = std::chrono::steady_clock::now();
  if (auto* learner = dynamic_cast<ActorCriticAgent*>(agent.get())) {
    learner->set_warmup(true);
    for (int e = 0; learner->needs_warmup() && e < kMaxWarmupEpisodes; ++e)
      run_episode(sim, *agent, mix_seed(mix_seed(seed, kWarmupStream), e), e, true);
    learner->set_warmup(false);
    learner->pretrain_critic(learner->config().critic_pretrain_steps);
  }
  for (int e = 0; e < cfg.train_episodes; ++e)
    train.push_back(run_episode(sim, *agent, train_episode_seed(seed, e), e, true));
  const double train_seconds = seconds_since(t0);
  AgentRun run = test_only(*agent, env, cfg, baseline, seed);
  run.train = std::move(train);
  run.train_seconds = train_seconds;
  std::vector<double> tail;
  for (std::size_t e = run.train.size() > 10 ? run.train.size() - 10 : 0; e < run.train.size(); ++e)
    if (!std::isnan(run.train[e].critic_loss)) tail.push_back(run.train[e].critic_loss);
  run.row.final_loss = mean_of(tail);
  run.agent = std::move(agent);
  return run;
}

// -------------------------------------------------------------- experiment

namespace {

struct UnitOutput {
  std::vector<ResultRow> rows;
  std::vector<LossPoint> losses;
  std::vector<Timing> timings;
  std::vector<std::string> diagnostics;
};

std::string file_token(const std::string& s) {
  std::string out;
  for (char c : s) out += std::isalnum(static_cast<unsigned char>(c)) || c == '.' ? c : '-';
  return out;
}

void record(UnitOutput& out, AgentRun& run, const ExperimentConfig& cfg, const Setting& setting,
            std::uint64_t seed, const std::optional<std::string>& checkpoint_dir) {
  run.row.scenario = cfg.scenario;
  run.row.setting = setting.label;
  out.rows.push_back(run.row);
  out.timings.push_back({setting.label, seed, run.row.agent, run.train_seconds, run.test_seconds});
  auto* learner = dynamic_cast<ActorCriticAgent*>(run.agent.get());
  for (std::size_t e = 0; e < run.train.size(); ++e) {
    const auto& s = run.train[e];
    if (learner)
      out.losses.push_back({setting.label, seed, run.row.agent, static_cast<int>(e),
                            s.critic_loss, s.mean_q, s.served});
    json line = {{"setting", setting.label},
                 {"seed", seed},
                 {"agent", run.row.agent},
                 {"episode", e},
                 {"served", s.served},
                 {"requests", s.requests},
                 {"spent", s.spent},
                 {"critic_loss", number_or_null(s.critic_loss)},
                 {"mean_q", number_or_null(s.mean_q)},
                 {"train_steps", s.train_steps}};
    out.diagnostics.push_back(line.dump());
  }
  if (learner && checkpoint_dir && cfg.save_checkpoints) {
    std::filesystem::create_directories(*checkpoint_dir);
    learner->save(*checkpoint_dir + "/" + file_token(setting.label) + "_seed" +
                  std::to_string(seed) + "_" + file_token(run.row.agent) + ".ckpt");
  }
}

UnitOutput run_unit(const ExperimentConfig& cfg, const Setting& setting, std::uint64_t seed,
                    const std::optional<std::string>& checkpoint_dir) {
  UnitOutput out;
  const Environment env = build_environment(cfg, setting, seed);
  const BaselineSummary baseline = evaluate_baseline(env, cfg, seed);
  for (const auto& name : cfg.agents) {
    AgentRun run = train_and_test(make_agent(name, env, cfg, baseline, seed), env, cfg,
                                  baseline, seed);
    record(out, run, cfg, setting, seed, checkpoint_dir);
  }
  if (cfg.scenario == "optimality") {
    const IlpInstance inst = matched_instance(env);
    BranchAndBoundOptions opt;
    opt.node_cap = cfg.ilp_node_cap;
    const double k = cfg.test_episodes;
    for (int v : cfg.horizons) {
      const auto t0 = std::chrono::steady_clock::now();
      const HorizonResult h = v_horizon_optimize(inst, v, opt);
      ResultRow r;
      r.scenario = cfg.scenario;
      r.setting = setting.label;
      r.seed = seed;
      r.agent = "ILP-V" + std::to_string(v) + (h.exact ? "" : "*");
      r.test_episodes = 1;
      r.served = h.served;
      r.served_max = h.served;
      r.unserved = static_cast<double>(inst.demand.total()) - h.served;
      r.baseline_unserved = static_cast<double>(baseline.unserved_total) / k;
      const auto un = static_cast<std::int64_t>(std::llround(r.unserved));
      r.dur = baseline.unserved_total > 0
                  ? dur(baseline.unserved_total, un * cfg.test_episodes)
                  : 0.0;
      r.kl = std::nan("");
      r.baseline_kl = baseline.kl_mean;
      r.spent = h.spent;
      r.final_loss = std::nan("");
      out.rows.push_back(r);
      out.timings.push_back({setting.label, seed, r.agent, 0.0, seconds_since(t0)});
    }
  }
  return out;
}

UnitOutput run_generalization_unit(const ExperimentConfig& cfg,
                                   const std::vector<Setting>& settings, std::uint64_t seed,
                                   const std::optional<std::string>& checkpoint_dir) {
  UnitOutput out;
  const Environment home = build_environment(cfg, settings[0], seed);
  const BaselineSummary home_base = evaluate_baseline(home, cfg, seed);
  std::vector<std::unique_ptr<PricingAgent>> trained;
  for (const auto& name : cfg.agents) {
    AgentRun run = train_and_test(make_agent(name, home, cfg, home_base, seed), home, cfg,
                                  home_base, seed);
    record(out, run, cfg, settings[0], seed, checkpoint_dir);
    trained.push_back(std::move(run.agent));
  }
  for (std::size_t a = 1; a < settings.size(); ++a) {
    const Environment env = build_environment(cfg, settings[a], seed);
    const BaselineSummary base = evaluate_baseline(env, cfg, seed);
    for (auto& agent : trained) {
      AgentRun run = test_only(*agent, env, cfg, base, seed);
      record(out, run, cfg, settings[a], seed, std::nullopt);
    }
  }
  return out;
}

}  // namespace

int worker_count(const ExperimentConfig& cfg) {
  if (cfg.workers > 0) return cfg.workers;
  if (const char* env = std::getenv("REBAL_WORKERS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  return 1;
}

ExperimentResults run_experiment(const ExperimentConfig& cfg,
                                 const std::optional<std::string>& checkpoint_dir) {
  cfg.validate();
  const auto settings = scenario_settings(cfg);
  struct Unit {
    std::size_t setting;
    std::uint64_t seed;
  };
  std::vector<Unit> units;
  if (cfg.scenario == "generalization") {
    for (auto seed : cfg.seeds) units.push_back({0, seed});
  } else {
    for (std::size_t s = 0; s < settings.size(); ++s)
      for (auto seed : cfg.seeds) units.push_back({s, seed});
  }

  std::vector<UnitOutput> outputs(units.size());
  std::vector<std::exception_ptr> errors(units.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t u = next++; u < units.size(); u = next++) {
      try {
        outputs[u] = cfg.scenario == "generalization"
                         ? run_generalization_unit(cfg, settings, units[u].seed, checkpoint_dir)
                         : run_unit(cfg, settings[units[u].setting], units[u].seed,
                                    checkpoint_dir);
      } catch (...) {
        errors[u] = std::current_exception();
      }
    }
  };
  const int workers = std::min<int>(worker_count(cfg), static_cast<int>(units.size()));
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  ExperimentResults res;
  res.config = cfg;
  for (auto& o : outputs) {
    res.rows.insert(res.rows.end(), o.rows.begin(), o.rows.end());
    res.losses.insert(res.losses.end(), o.losses.begin(), o.losses.end());
    res.timings.insert(res.timings.end(), o.timings.begin(), o.timings.end());
    res.diagnostics.insert(res.diagnostics.end(), o.diagnostics.begin(), o.diagnostics.end());
  }
  // Units are already in (setting, seed) order; a stable sort by setting
  // position keeps generalization rows grouped by area.
  std::map<std::string, std::size_t> order;
  for (std::size_t s = 0; s < settings.size(); ++s) order[settings[s].label] = s;
  std::stable_sort(res.rows.begin(), res.rows.end(), [&](const ResultRow& a, const ResultRow& b) {
    if (order[a.setting] != order[b.setting]) return order[a.setting] < order[b.setting];
    return a.seed < b.seed;
  });
  return res;
}

// ----------------------------------------------------------------- output

std::string results_csv(const std::vector<ResultRow>& rows) {
  std::string out =
      "scenario,setting,seed,agent,test_episodes,served,served_max,unserved,baseline_unserved,dur_pct,"
      "kl_nats,baseline_kl_nats,spent,final_critic_loss\n";
  for (const auto& r : rows) {
    out += r.scenario + "," + r.setting + "," + std::to_string(r.seed) + "," + r.agent + "," +
           std::to_string(r.test_episodes) + "," + fmt(r.served) + "," + fmt(r.served_max) + "," + fmt(r.unserved) + "," +
           fmt(r.baseline_unserved) + "," + fmt(r.dur) + "," + fmt(r.kl) + "," +
           fmt(r.baseline_kl) + "," + fmt(r.spent) + "," + fmt(r.final_loss) + "\n";
  }
  return out;
}

std::vector<ResultRow> read_results_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  std::getline(in, line);
  std::vector<ResultRow> rows;
  auto num = [](const std::string& s) { return s == "nan" ? std::nan("") : std::stod(s); };
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 14) throw std::runtime_error("malformed results row: " + line);
    ResultRow r;
    r.scenario = f[0];
    r.setting = f[1];
    r.seed = std::stoull(f[2]);
    r.agent = f[3];
    r.test_episodes = std::stoi(f[4]);
    r.served = num(f[5]);
    r.served_max = num(f[6]);
    r.unserved = num(f[7]);
    r.baseline_unserved = num(f[8]);
    r.dur = num(f[9]);
    r.kl = num(f[10]);
    r.baseline_kl = num(f[11]);
    r.spent = num(f[12]);
    r.final_loss = num(f[13]);
    rows.push_back(r);
  }
  return rows;
}

namespace {

struct Group {
  std::string setting, agent;
  std::vector<double> served, dur, kl, loss, spent;
};

std::vector<Group> group_rows(const std::vector<ResultRow>& rows) {
  std::vector<Group> groups;
  for (const auto& r : rows) {
    auto it = std::find_if(groups.begin(), groups.end(), [&](const Group& g) {
      return g.setting == r.setting && g.agent == r.agent;
    });
    if (it == groups.end()) {
      groups.push_back({r.setting, r.agent, {}, {}, {}, {}, {}});
      it = groups.end() - 1;
    }
    it->served.push_back(r.served);
    it->dur.push_back(r.dur);
    if (!std::isnan(r.kl)) it->kl.push_back(r.kl);
    if (!std::isnan(r.final_loss)) it->loss.push_back(r.final_loss);
    it->spent.push_back(r.spent);
  }
  return groups;
}

std::vector<std::pair<double, double>> dur_cdf(const std::vector<double>& durs) {
  std::vector<double> v = durs;
  std::sort(v.begin(), v.end());
  std::vector<std::pair<double, double>> out;
  for (std::size_t k = 0; k < v.size(); ++k)
    out.push_back({v[k], static_cast<double>(k + 1) / static_cast<double>(v.size())});
  return out;
}

}  // namespace

std::string summary_json(const ExperimentResults& results) {
  json j;
  j["name"] = results.config.name;
  j["scenario"] = results.config.scenario;
  j["seeds"] = results.config.seeds;
  j["kl_units"] = "nats";
  j["dur_units"] = "percent";
  json groups = json::array();
  for (const auto& g : group_rows(results.rows)) {
    groups.push_back({{"setting", g.setting},
                      {"agent", g.agent},
                      {"runs", g.served.size()},
                      {"served_mean", number_or_null(mean_of(g.served))},
                      {"served_std", number_or_null(stddev_of(g.served))},
                      {"dur_mean", number_or_null(mean_of(g.dur))},
                      {"dur_std", number_or_null(stddev_of(g.dur))},
                      {"kl_mean", number_or_null(mean_of(g.kl))},
                      {"kl_std", number_or_null(stddev_of(g.kl))},
                      {"spent_mean", number_or_null(mean_of(g.spent))},
                      {"final_critic_loss_mean", number_or_null(mean_of(g.loss))}});
  }
  j["groups"] = groups;
  if (results.config.scenario == "generalization") {
    json cdf = json::object();
    std::map<std::string, std::vector<double>> per_agent;
    for (const auto& r : results.rows)
      if (r.setting != "area=0") per_agent[r.agent].push_back(r.dur);
    for (const auto& [agent, durs] : per_agent) {
      json pts = json::array();
      for (const auto& [d, f] : dur_cdf(durs)) pts.push_back({{"dur_pct", d}, {"cdf", f}});
      cdf[agent] = pts;
    }
    j["dur_cdf"] = cdf;
  }
  return j.dump(2) + "\n";
}

std::string report_table(const std::vector<ResultRow>& rows) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-16s %-10s %5s %10s %9s %9s %10s %12s\n", "setting", "agent",
                "runs", "served", "DUR%", "KL(nats)", "spent", "final_loss");
  out += buf;
  for (const auto& g : group_rows(rows)) {
    std::snprintf(buf, sizeof buf, "%-16s %-10s %5zu %10.2f %9.2f %9.4f %10.2f %12.5f\n",
                  g.setting.c_str(), g.agent.c_str(), g.served.size(), mean_of(g.served),
                  mean_of(g.dur), mean_of(g.kl), mean_of(g.spent), mean_of(g.loss));
    out += buf;
  }
  return out;
}

void write_results(const ExperimentResults& results, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto write = [&](const std::string& name, const std::string& text) {
    std::ofstream f(fs::path(dir) / name, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + (fs::path(dir) / name).string());
    f << text;
  };
  write("config.json", results.config.to_json());
  write("results.csv", results_csv(results.rows));

  std::string losses = "setting,seed,agent,episode,critic_loss,mean_q,train_served\n";
  for (const auto& l : results.losses)
    losses += l.setting + "," + std::to_string(l.seed) + "," + l.agent + "," +
              std::to_string(l.episode) + "," + fmt(l.critic_loss) + "," + fmt(l.mean_q) + "," +
              std::to_string(l.served) + "\n";
  write("loss_curves.csv", losses);

  std::string timings = "setting,seed,agent,train_seconds,test_seconds\n";
  for (const auto& t : results.timings)
    timings += t.setting + "," + std::to_string(t.seed) + "," + t.agent + "," +
               fmt(t.train_seconds) + "," + fmt(t.test_seconds) + "\n";
  write("timings.csv", timings);

  std::string diag;
  for (const auto& d : results.diagnostics) diag += d + "\n";
  write("diagnostics.jsonl", diag);
  write("summary.json", summary_json(results));

  if (results.config.scenario == "generalization") {
    std::map<std::string, std::vector<double>> per_agent;
    for (const auto& r : results.rows)
      if (r.setting != "area=0") per_agent[r.agent].push_back(r.dur);
    std::string cdf = "agent,dur_pct,cdf\n";
    for (const auto& [agent, durs] : per_agent)
      for (const auto& [d, f] : dur_cdf(durs)) cdf += agent + "," + fmt(d) + "," + fmt(f) + "\n";
    write("dur_cdf.csv", cdf);
  }
}

}  // namespace rebal
