#include "rebal/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace rebal {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t k = 0; k < line.size(); ++k) {
    const char ch = line[k];
    if (quoted) {
      if (ch == '"') {
        if (k + 1 < line.size() && line[k + 1] == '"') {
          cur.push_back('"');
          ++k;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

bool parse_double(const std::string& text, double& out) {
  const std::string t = trim(text);
  if (t.empty()) return false;
  const char* first = t.data();
  const char* last = t.data() + t.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last && std::isfinite(out);
}

double normal_pdf(double x, double mu, double sigma) {
  const double z = (x - mu) / sigma;
  return std::exp(-0.5 * z * z);
}

}  // namespace

std::int64_t ParseReport::dropped_total() const {
  std::int64_t sum = 0;
  for (const auto& [reason, count] : dropped) sum += count;
  return sum;
}

ParsedTrips parse_trajectories(const std::string& path, const RegionGrid& grid) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trip file: " + path);

  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("trip file is empty: " + path);
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF &&
      static_cast<unsigned char>(line[1]) == 0xBB && static_cast<unsigned char>(line[2]) == 0xBF)
    line = line.substr(3);

  const std::vector<std::string> header = split_csv_line(line);
  static const char* kRequired[] = {"order_id", "bike_id",   "user_id",
                                    "start_time", "start_lng", "start_lat",
                                    "end_time",   "end_lng",   "end_lat"};
  std::vector<int> col(9, -1);
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string name = trim(header[c]);
    for (int r = 0; r < 9; ++r)
      if (name == kRequired[r]) col[r] = static_cast<int>(c);
  }
  for (int r = 0; r < 9; ++r)
    if (col[r] < 0)
      throw std::runtime_error(std::string("trip file missing column: ") + kRequired[r]);
  const int max_col = *std::max_element(col.begin(), col.end());

  ParsedTrips out;
  auto drop = [&](const char* reason) { ++out.report.dropped[reason]; };

  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++out.report.rows_read;
    const auto f = split_csv_line(line);
    if (static_cast<int>(f.size()) <= max_col) {
      drop("malformed row");
      continue;
    }
    TripRecord trip;
    trip.order_id = trim(f[col[0]]);
    trip.bike_id = trim(f[col[1]]);
    trip.user_id = trim(f[col[2]]);
    const auto start = parse_timestamp(trim(f[col[3]]));
    const auto end = parse_timestamp(trim(f[col[6]]));
    if (!start || !end) {
      drop("malformed timestamp");
      continue;
    }
    if (!parse_double(f[col[4]], trip.start_loc.lon) ||
        !parse_double(f[col[5]], trip.start_loc.lat) ||
        !parse_double(f[col[7]], trip.end_loc.lon) ||
        !parse_double(f[col[8]], trip.end_loc.lat)) {
      drop("malformed row");
      continue;
    }
    trip.start_time = *start;
    trip.end_time = *end;
    if (trip.end_time < trip.start_time) {
      drop("negative duration");
      continue;
    }
    if (!grid.region_of(trip.start_loc) || !grid.region_of(trip.end_loc)) {
      drop("out of area");
      continue;
    }
    out.trips.push_back(std::move(trip));
  }
  out.report.rows_kept = static_cast<std::int64_t>(out.trips.size());
  return out;
}

TravelTimeModel::TravelTimeModel(const RegionGrid& grid)
    : grid_(grid),
      hist_(static_cast<std::size_t>(grid.size()) * grid.size()),
      counts_(static_cast<std::size_t>(grid.size()) * grid.size(), 0) {}

void TravelTimeModel::add(int origin, int destination, int minutes) {
  const auto k = static_cast<std::size_t>(origin) * grid_.size() + destination;
  ++hist_.at(k)[std::max(0, minutes)];
  ++counts_.at(k);
}

std::int64_t TravelTimeModel::observations(int origin, int destination) const {
  if (counts_.empty()) return 0;
  return counts_.at(static_cast<std::size_t>(origin) * grid_.size() + destination);
}

const std::map<int, std::int64_t>& TravelTimeModel::histogram(int origin,
                                                              int destination) const {
  return hist_.at(static_cast<std::size_t>(origin) * grid_.size() + destination);
}

int TravelTimeModel::fallback_minutes(int origin, int destination) const {
  return kMinutesPerCell * std::max(1, grid_.manhattan(origin, destination));
}

int TravelTimeModel::sample(int origin, int destination, Rng& rng) const {
  const std::int64_t n = observations(origin, destination);
  if (n == 0) return fallback_minutes(origin, destination);
  std::uniform_int_distribution<std::int64_t> pick(0, n - 1);
  std::int64_t r = pick(rng);
  for (const auto& [minutes, count] : histogram(origin, destination)) {
    if (r < count) return minutes;
    r -= count;
  }
  return histogram(origin, destination).rbegin()->first;
}

WeekdayDemand aggregate_weekday_demand(const std::vector<TripRecord>& trips,
                                       const RegionGrid& grid, int slots) {
  if (trips.empty()) throw std::invalid_argument("aggregate_weekday_demand: no trips");
  if (slots < 1 || (24 * 60) % slots != 0)
    throw std::invalid_argument("aggregate_weekday_demand: slots must divide 24h");
  const int slot_minutes = 24 * 60 / slots;

  WeekdayDemand out{DemandTensor(slots, grid.size()), TravelTimeModel(grid), 0};
  std::vector<std::int64_t> days;
  for (const TripRecord& trip : trips) {
    if (weekday_of(trip.start_time) >= 5) continue;
    const auto i = grid.region_of(trip.start_loc);
    const auto l = grid.region_of(trip.end_loc);
    if (!i || !l) continue;
    const int t = minute_of_day(trip.start_time) / slot_minutes;
    ++out.demand.at(t, *i, *l);
    out.durations.add(*i, *l, static_cast<int>(trip.end_time - trip.start_time));
    days.push_back((trip.start_time - minute_of_day(trip.start_time)) / (24 * 60));
  }
  std::sort(days.begin(), days.end());
  out.weekdays_seen = static_cast<int>(std::unique(days.begin(), days.end()) - days.begin());
  return out;
}

DemandTensor correct_lost_demand(const DemandTensor& demand,
                                 const std::vector<std::vector<double>>& outage,
                                 double cap_multiplier) {
  if (static_cast<int>(outage.size()) != demand.slots())
    throw std::invalid_argument("correct_lost_demand: outage slot count mismatch");
  DemandTensor out = demand;
  for (int t = 0; t < demand.slots(); ++t) {
    if (static_cast<int>(outage[t].size()) != demand.regions())
      throw std::invalid_argument("correct_lost_demand: outage region count mismatch");
    for (int i = 0; i < demand.regions(); ++i) {
      const double f = std::clamp(outage[t][i], 0.0, 1.0);
      for (int l = 0; l < demand.regions(); ++l) {
        const int d = demand.at(t, i, l);
        const double cap = std::floor(cap_multiplier * d + 1e-9);
        double v = f >= 1.0 ? cap : std::min(cap, std::round(d / (1.0 - f)));
        v = std::max<double>(v, d);
        out.at(t, i, l) = static_cast<int>(v);
      }
    }
  }
  return out;
}

std::vector<int> apportion(std::int64_t total, const std::vector<double>& weights) {
  std::vector<int> out(weights.size(), 0);
  if (total <= 0) return out;
  const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (!(sum > 0.0)) throw std::invalid_argument("apportion: all weights are zero");
  std::vector<double> rem(weights.size());
  std::int64_t assigned = 0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    const double exact = static_cast<double>(total) * weights[k] / sum;
    const double base = std::floor(exact + 1e-9);
    out[k] = static_cast<int>(base);
    rem[k] = exact - base;
    assigned += out[k];
  }
  std::vector<std::size_t> order(weights.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return rem[a] > rem[b] + 1e-12; });
  for (std::size_t k = 0; assigned < total; k = (k + 1) % order.size()) {
    ++out[order[k]];
    ++assigned;
  }
  return out;
}

SyntheticDemand synthesize_demand(const SyntheticDemandParams& p) {
  if (p.regions < 1 || p.slots < 1 || !(p.daily_volume > 0.0) || !(p.peak_sigma > 0.0) ||
      p.floor_share < 0.0 || p.floor_share > 1.0 || p.commute_fraction < 0.0 ||
      p.commute_fraction > 1.0 || p.peak_slots.first < 0 || p.peak_slots.first >= p.slots ||
      p.peak_slots.second < 0 || p.peak_slots.second >= p.slots)
    throw std::invalid_argument("synthesize_demand: invalid parameters");

  Rng rng(mix_seed(p.seed, 0x5eed));
  const int n = p.regions;

  // Region roles: a random third residential, another third work.
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  const int role = std::max(1, n / 3);
  SyntheticDemand out{DemandTensor(p.slots, n), {}, {}};
  out.residential.assign(perm.begin(), perm.begin() + role);
  if (n >= 2)
    out.work.assign(perm.begin() + std::min(role, n - 1),
                    perm.begin() + std::min(2 * role, n));
  else
    out.work = out.residential;
  std::sort(out.residential.begin(), out.residential.end());
  std::sort(out.work.begin(), out.work.end());

  // Background origin-destination weights: gravity on random attractiveness.
  std::uniform_real_distribution<double> attract(0.5, 1.5);
  std::vector<double> a(static_cast<std::size_t>(n));
  for (double& v : a) v = attract(rng);
  std::vector<double> background(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i)
    for (int l = 0; l < n; ++l) background[i * n + l] = a[i] * a[l];

  std::vector<double> commute_am(static_cast<std::size_t>(n) * n, 0.0);
  std::vector<double> commute_pm(static_cast<std::size_t>(n) * n, 0.0);
  for (int i : out.residential)
    for (int l : out.work) {
      commute_am[i * n + l] = 1.0;
      commute_pm[l * n + i] = 1.0;
    }

  std::vector<double> am(static_cast<std::size_t>(p.slots)), pm(am.size());
  double am_sum = 0.0, pm_sum = 0.0;
  for (int t = 0; t < p.slots; ++t) {
    am[t] = normal_pdf(t, p.peak_slots.first, p.peak_sigma);
    pm[t] = normal_pdf(t, p.peak_slots.second, p.peak_sigma);
    am_sum += am[t];
    pm_sum += pm[t];
  }
  const double peak_volume = p.daily_volume * (1.0 - p.floor_share);
  const double floor_volume = p.daily_volume * p.floor_share / p.slots;

  for (int t = 0; t < p.slots; ++t) {
    const double vam = 0.5 * peak_volume * am[t] / am_sum;
    const double vpm = 0.5 * peak_volume * pm[t] / pm_sum;
    const double bg_volume = floor_volume + (1.0 - p.commute_fraction) * (vam + vpm);
    const double bg_sum = std::accumulate(background.begin(), background.end(), 0.0);
    const double am_cells = std::accumulate(commute_am.begin(), commute_am.end(), 0.0);
    std::vector<double> expected(static_cast<std::size_t>(n) * n);
    for (std::size_t k = 0; k < expected.size(); ++k) {
      expected[k] = bg_volume * background[k] / bg_sum +
                    p.commute_fraction * vam * commute_am[k] / am_cells +
                    p.commute_fraction * vpm * commute_pm[k] / am_cells;
    }
    const double slot_volume = std::accumulate(expected.begin(), expected.end(), 0.0);
    const auto counts = apportion(std::llround(slot_volume), expected);
    for (int i = 0; i < n; ++i)
      for (int l = 0; l < n; ++l) out.demand.at(t, i, l) = counts[i * n + l];
  }
  return out;
}

std::vector<int> initial_bike_counts(int total_supply, const DemandTensor& demand) {
  if (total_supply < 0) throw std::invalid_argument("initial_bike_counts: negative supply");
  std::vector<double> w(static_cast<std::size_t>(demand.regions()));
  for (int i = 0; i < demand.regions(); ++i) w[i] = static_cast<double>(demand.region_total(i));
  if (demand.total() == 0) throw std::invalid_argument("initial_bike_counts: all-zero demand");
  return apportion(total_supply, w);
}

std::vector<std::vector<LocalPoint>> initial_bike_distribution(
    int total_supply, const DemandTensor& demand,
    const std::vector<std::vector<LocalPoint>>& location_pool, std::uint64_t seed) {
  const auto counts = initial_bike_counts(total_supply, demand);
  if (static_cast<int>(location_pool.size()) != demand.regions())
    throw std::invalid_argument("initial_bike_distribution: pool size mismatch");
  Rng rng(seed);
  std::vector<std::vector<LocalPoint>> out(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] == 0) continue;
    const auto& pool = location_pool[i];
    if (pool.empty())
      throw std::invalid_argument("initial_bike_distribution: empty location pool for region " +
                                  std::to_string(i));
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    out[i].reserve(static_cast<std::size_t>(counts[i]));
    for (int k = 0; k < counts[i]; ++k) out[i].push_back(pool[pick(rng)]);
  }
  return out;
}

std::int64_t default_total_supply(std::int64_t order_count) {
  if (order_count < 0) throw std::invalid_argument("default_total_supply: negative count");
  // orders * 365 / 2000, rounded half up.
  return (order_count * 365 + 1000) / 2000;
}

std::vector<std::vector<LocalPoint>> uniform_location_pool(const RegionGrid& grid,
                                                           int per_region,
                                                           std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<LocalPoint>> pool(static_cast<std::size_t>(grid.size()));
  for (int i = 0; i < grid.size(); ++i)
    for (int k = 0; k < per_region; ++k) pool[i].push_back(grid.sample_point(i, rng));
  return pool;
}

std::vector<std::vector<LocalPoint>> location_pool_from_trips(
    const std::vector<TripRecord>& trips, const RegionGrid& grid) {
  std::vector<std::vector<LocalPoint>> pool(static_cast<std::size_t>(grid.size()));
  for (const auto& trip : trips) {
    if (const auto r = grid.region_of(trip.end_loc))
      pool[*r].push_back(grid.to_local(trip.end_loc));
  }
  return pool;
}

}  // namespace rebal
