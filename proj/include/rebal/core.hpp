#pragma once

// Domain types shared across the simulator, agents and the offline solver.

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace rebal {

using Rng = std::mt19937_64;

/// SplitMix64 combination used to derive independent stream seeds.
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream);

struct LonLat {
  double lon = 0.0;
  double lat = 0.0;
};

/// Local planar coordinates in meters relative to the grid origin (east, north).
struct LocalPoint {
  double x = 0.0;
  double y = 0.0;
};

double distance_m(const LocalPoint& a, const LocalPoint& b);

/// Rectangular partition of the service area. Region indices are row-major
/// with row 0 at the southern edge and column 0 at the western edge.
class RegionGrid {
 public:
  RegionGrid() = default;
  RegionGrid(int rows, int cols, double cell_width_m, double cell_height_m,
             LonLat origin = {});

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int size() const { return rows_ * cols_; }
  double cell_width_m() const { return cell_width_m_; }
  double cell_height_m() const { return cell_height_m_; }
  const LonLat& origin() const { return origin_; }

  int index(int row, int col) const { return row * cols_ + col; }
  int row_of(int region) const { return region / cols_; }
  int col_of(int region) const { return region % cols_; }

  /// Equirectangular projection around the origin.
  LocalPoint to_local(const LonLat& loc) const;
  LonLat to_lonlat(const LocalPoint& p) const;

  /// Region containing `loc`, or nullopt when outside the bounding box.
  std::optional<int> region_of(const LonLat& loc) const;
  std::optional<int> region_of(const LocalPoint& p) const;

  LocalPoint cell_center(int region) const;
  /// Uniform point inside the cell.
  LocalPoint sample_point(int region, Rng& rng) const;

  /// Moore neighborhood clipped to the grid, ascending index order.
  std::vector<int> neighbors(int region) const;
  bool adjacent(int a, int b) const;
  int manhattan(int a, int b) const;

  double cell_diagonal_m() const;
  /// Longest walk a user can face: corner of the user's cell to the far corner of a
  /// diagonal neighbor, i.e. two cell diagonals.
  double max_walk_distance_m() const { return 2.0 * cell_diagonal_m(); }
  /// Cost coefficient that maps max_walk_distance_m() onto `max_cost`.
  double calibrated_alpha(double max_cost = 5.0) const;

 private:
  void check_region(int region) const;

  int rows_ = 1;
  int cols_ = 1;
  double cell_width_m_ = 500.0;
  double cell_height_m_ = 500.0;
  LonLat origin_{};
  double meters_per_deg_lon_ = 0.0;
  double meters_per_deg_lat_ = 0.0;
};

/// Walking cost alpha * x^2 for a neighbor pickup at distance x meters.
double walking_cost(double x_m, double alpha);

/// Minutes since 1970-01-01 00:00 in the local time of the data set.
using MinuteStamp = std::int64_t;

struct TripRecord {
  std::string order_id;
  std::string bike_id;
  std::string user_id;
  MinuteStamp start_time = 0;
  MinuteStamp end_time = 0;
  LonLat start_loc;
  LonLat end_loc;
};

/// 0 = Monday ... 6 = Sunday.
int weekday_of(MinuteStamp t);
int minute_of_day(MinuteStamp t);
/// Parses "YYYY-MM-DD[T ]HH:MM[:SS]"; nullopt on malformed input.
std::optional<MinuteStamp> parse_timestamp(const std::string& text);
std::string format_timestamp(MinuteStamp t);

/// d[t][i][l]: users intending to ride from region i to region l in slot t.
class DemandTensor {
 public:
  DemandTensor() = default;
  DemandTensor(int slots, int regions);

  int slots() const { return slots_; }
  int regions() const { return regions_; }

  int& at(int t, int i, int l) { return data_[offset(t, i, l)]; }
  int at(int t, int i, int l) const { return data_[offset(t, i, l)]; }

  /// D_i(t) = sum_l d[t][i][l].
  int origin_total(int t, int i) const;
  int slot_total(int t) const;
  /// sum over all slots and destinations for region i.
  std::int64_t region_total(int i) const;
  std::int64_t total() const;

  const std::vector<int>& raw() const { return data_; }
  bool operator==(const DemandTensor& other) const = default;

 private:
  std::size_t offset(int t, int i, int l) const;

  int slots_ = 0;
  int regions_ = 0;
  std::vector<int> data_;
};

/// MDP state s_t = (S(t), D(t-1), A(t-1), E(t-1), RB(t), U(t)).
struct Observation {
  static constexpr int kBaseFeatures = 4;

  int regions = 0;
  int window = 8;
  std::vector<double> supply;
  std::vector<double> last_demand;
  std::vector<double> last_arrival;
  std::vector<double> last_expense;
  /// unservice[i * window + k], k = 0 oldest ... window-1 newest.
  std::vector<double> unservice;
  double remaining_budget = 0.0;

  Observation() = default;
  Observation(int regions, int window);

  int features_per_region() const { return kBaseFeatures + window; }
  int flat_size() const { return regions * features_per_region() + 1; }

  /// Per-region blocks [S, D, A, E, U_0 .. U_{W-1}] followed by RB.
  std::vector<double> flatten() const;
  static Observation unflatten(const std::vector<double>& flat, int regions,
                               int window);

  bool all_finite() const;
};

/// One incentive per origin region: the amount a user in region i receives for
/// picking up a bike in any neighbor of i.
struct PriceAction {
  std::vector<double> price;

  PriceAction() = default;
  explicit PriceAction(int regions, double value = 0.0)
      : price(static_cast<std::size_t>(regions), value) {}

  int size() const { return static_cast<int>(price.size()); }
  PriceAction clipped(double p_max) const;
};

struct ParkedBike {
  LocalPoint pos;
};

struct TripInTransit {
  int arrival_minute = 0;
  std::uint64_t sequence = 0;
  int destination = 0;
  LocalPoint dropoff;
};

/// Ground truth evolved by the simulator.
struct SystemState {
  std::vector<std::vector<ParkedBike>> bikes;  // per region
  std::vector<TripInTransit> in_transit;        // min-heap on (arrival, sequence)
  double remaining_budget = 0.0;
  std::vector<double> unservice_window;         // regions x window
  std::vector<int> last_demand;
  std::vector<int> last_arrival;
  std::vector<double> last_expense;

  int parked_total() const;
  int fleet_size() const { return parked_total() + static_cast<int>(in_transit.size()); }
};

}  // namespace rebal
