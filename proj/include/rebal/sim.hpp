#pragma once

// Minute-resolution bike-sharing environment driven by per-region pick-up
// incentives.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <vector>

#include "rebal/core.hpp"
#include "rebal/ingest.hpp"

namespace rebal {

enum class TravelMode {
  kSampled,   // durations from the TravelTimeModel, arrival mid-slot
  kSameSlot,  // every trip completes at the start of the next slot
};

enum class CostMode {
  kWalking,      // alpha * x^2 with the user's actual walk
  kFixedMatrix,  // c[t][i][j] shared by every user of that pair in that slot
};

/// c[slot_of_day][i][j] for CostMode::kFixedMatrix.
struct PairCostTable {
  int slots = 0;
  int regions = 0;
  std::vector<double> cost;

  double at(int t, int i, int j) const {
    return cost[(static_cast<std::size_t>(t) * regions + i) * regions + j];
  }
  double& at(int t, int i, int j) {
    return cost[(static_cast<std::size_t>(t) * regions + i) * regions + j];
  }
};

struct SimConfig {
  RegionGrid grid;
  DemandTensor demand;  // one day; repeated for multi-day episodes
  int total_supply = 0;
  double budget = 0.0;
  int days = 1;
  int minutes_per_slot = 60;
  int window = 8;
  double p_max = 5.0;
  /// Walking-cost coefficient; <= 0 selects grid.calibrated_alpha(p_max).
  double alpha = 0.0;
  /// Initial bike positions are drawn from here; empty -> uniform pool.
  std::vector<std::vector<LocalPoint>> location_pool;
  /// Explicit initial bike positions per region; overrides the demand-share
  /// placement and must hold exactly total_supply bikes.
  std::vector<std::vector<LocalPoint>> initial_bikes;
  std::optional<TravelTimeModel> travel;
  TravelMode travel_mode = TravelMode::kSampled;
  CostMode cost_mode = CostMode::kWalking;
  PairCostTable pair_costs;

  int slots_per_day() const { return demand.slots(); }
  int episode_steps() const { return demand.slots() * days; }
  double effective_alpha() const;
  /// Throws std::invalid_argument describing the first problem found.
  void validate() const;
};

/// A neighbor pick-up proposal made to a user without local supply.
struct Offer {
  int target_region = 0;
  int bike_index = 0;
  LocalPoint bike_pos;
  double distance_m = 0.0;
  double cost = 0.0;
  double price = 0.0;
};

struct Census {
  std::vector<int> supply;
  int in_transit = 0;

  int total() const;
};

struct StepOutcome {
  int reward = 0;               // satisfied requests in the slot
  int requests = 0;
  std::vector<int> served;      // per origin region
  std::vector<int> unsatisfied;
  std::vector<int> demand;
  std::vector<int> arrivals;
  std::vector<double> expenses;
  std::vector<int> no_local_bike;  // requests that found their region empty
  std::vector<int> offered;     // requests that received at least one offer
  std::vector<int> accepted;    // of those, how many took a neighbor bike
  Observation next_observation;
  bool episode_done = false;
};

struct SlotRecord {
  int slot = 0;
  int reward = 0;
  int requests = 0;
  std::vector<int> unsatisfied;
  std::vector<double> expenses;
  double remaining_budget = 0.0;
  Census census;
};

struct EpisodeLog {
  Census initial_census;
  std::vector<SlotRecord> slots;

  int unsatisfied_total() const;
  int reward_total() const;
  double spent_total() const;
  const Census& final_census() const;
};

/// Writes one JSON object per slot.
void write_episode_jsonl(const EpisodeLog& log, std::ostream& out);

class Simulator {
 public:
  using MinuteObserver = std::function<void(int minute, const Simulator&)>;

  explicit Simulator(SimConfig config);

  const SimConfig& config() const { return config_; }
  int regions() const { return config_.grid.size(); }

  Observation reset(std::uint64_t seed);
  StepOutcome step(const PriceAction& action);

  Census bike_census() const;
  Observation observation() const;
  const SystemState& state() const { return state_; }
  const EpisodeLog& log() const { return log_; }
  int current_step() const { return step_; }
  bool done() const { return step_ >= config_.episode_steps(); }

  /// Called after every simulated minute is served, and once more after the
  /// end-of-episode drain.
  void set_minute_observer(MinuteObserver observer) { observer_ = std::move(observer); }

 private:
  struct Request {
    int minute;
    int origin;
    int destination;
  };

  void process_arrivals(int minute);
  void drain_in_transit();
  void depart(int origin_region, int destination, int minute);
  std::optional<Offer> best_offer(int origin, const LocalPoint& user, double price,
                                  int slot_of_day) const;
  int nearest_bike(int region, const LocalPoint& user) const;

  SimConfig config_;
  double alpha_ = 0.0;
  std::vector<std::vector<int>> neighbors_;
  std::vector<std::vector<LocalPoint>> pool_;
  Rng rng_;
  SystemState state_;
  EpisodeLog log_;
  int step_ = 0;
  std::uint64_t trip_sequence_ = 0;
  std::vector<int> slot_arrivals_;
  MinuteObserver observer_;
};

}  // namespace rebal
