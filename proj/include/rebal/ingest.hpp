#pragma once

// Trip data ingestion and synthetic demand generation.

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "rebal/core.hpp"

namespace rebal {

struct ParseReport {
  std::int64_t rows_read = 0;
  std::int64_t rows_kept = 0;
  std::map<std::string, std::int64_t> dropped;  // reason -> count

  std::int64_t dropped_total() const;
};

struct ParsedTrips {
  std::vector<TripRecord> trips;
  ParseReport report;
};

/// Reads a trip CSV with header
///   order_id,bike_id,user_id,start_time,start_lng,start_lat,end_time,end_lng,end_lat[,trace]
/// Column order is taken from the header. Throws std::runtime_error when the
/// file cannot be opened or a required column is missing. Malformed rows are
/// dropped and counted under "malformed row", "malformed timestamp",
/// "negative duration" or "out of area".
ParsedTrips parse_trajectories(const std::string& path, const RegionGrid& grid);

/// Observed ride durations (minutes) per origin-destination pair, with the
/// grid fallback for pairs that were never observed.
class TravelTimeModel {
 public:
  static constexpr int kMinutesPerCell = 4;

  TravelTimeModel() = default;
  explicit TravelTimeModel(const RegionGrid& grid);

  void add(int origin, int destination, int minutes);
  std::int64_t observations(int origin, int destination) const;
  /// Draws from the empirical histogram, or 4 minutes per Manhattan cell
  /// (intra-region trips count as one cell) when the pair is unobserved.
  int sample(int origin, int destination, Rng& rng) const;
  int fallback_minutes(int origin, int destination) const;

  /// minutes -> count
  const std::map<int, std::int64_t>& histogram(int origin, int destination) const;

 private:
  RegionGrid grid_;
  std::vector<std::map<int, std::int64_t>> hist_;
  std::vector<std::int64_t> counts_;
};

struct WeekdayDemand {
  DemandTensor demand;
  TravelTimeModel durations;
  int weekdays_seen = 0;
};

/// Sums weekday trips by (start slot, origin, destination). `slots` must
/// divide 24 hours evenly. Throws std::invalid_argument on an empty trip list.
WeekdayDemand aggregate_weekday_demand(const std::vector<TripRecord>& trips,
                                       const RegionGrid& grid, int slots = 24);

/// Censored-demand inflation d / (1 - outage), rounded and capped at
/// `cap_multiplier` times the observed count. outage[t][i] in [0, 1].
DemandTensor correct_lost_demand(const DemandTensor& demand,
                                 const std::vector<std::vector<double>>& outage,
                                 double cap_multiplier = 3.0);

struct SyntheticDemandParams {
  int regions = 9;
  int slots = 24;
  double daily_volume = 3000.0;
  std::pair<int, int> peak_slots{8, 18};
  double peak_sigma = 1.5;
  /// Share of daily volume spread uniformly over the day.
  double floor_share = 0.2;
  double commute_fraction = 0.6;
  std::uint64_t seed = 1;
};

struct SyntheticDemand {
  DemandTensor demand;
  std::vector<int> residential;
  std::vector<int> work;
};

/// Bimodal commuter demand: two discretized Gaussians at the peak slots plus a
/// uniform floor. A `commute_fraction` of morning-peak trips runs from
/// residential to work regions and the same fraction of evening-peak trips runs
/// back. Deterministic in `seed`.
SyntheticDemand synthesize_demand(const SyntheticDemandParams& params);

/// Largest-remainder apportionment of `total` over `weights`, ties broken by
/// lower index. Throws when every weight is zero and total > 0.
std::vector<int> apportion(std::int64_t total, const std::vector<double>& weights);

/// Places round(total * D_i / sum D) bikes in every region, positions drawn
/// with replacement from that region's pool.
std::vector<std::vector<LocalPoint>> initial_bike_distribution(
    int total_supply, const DemandTensor& demand,
    const std::vector<std::vector<LocalPoint>>& location_pool, std::uint64_t seed);

/// Per-region bike counts used by initial_bike_distribution.
std::vector<int> initial_bike_counts(int total_supply, const DemandTensor& demand);

/// round(orders * 3.65 / 20), computed exactly in integers.
std::int64_t default_total_supply(std::int64_t order_count);

/// Uniform location pool for every cell of the grid (used when no bike
/// locations are available from data).
std::vector<std::vector<LocalPoint>> uniform_location_pool(const RegionGrid& grid,
                                                           int per_region,
                                                           std::uint64_t seed);

/// Trip end locations of `trips`, bucketed by region.
std::vector<std::vector<LocalPoint>> location_pool_from_trips(
    const std::vector<TripRecord>& trips, const RegionGrid& grid);

}  // namespace rebal
