#include "rebal/core.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <stdexcept>

namespace rebal {

namespace {

constexpr double kEarthRadiusM = 6371000.0;

// Howard Hinnant's days_from_civil.
std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

void civil_from_days(std::int64_t z, int& y, unsigned& m, unsigned& d) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = doy - (153 * mp + 2) / 5 + 1;
  m = mp < 10 ? mp + 3 : mp - 9;
  y = static_cast<int>(static_cast<std::int64_t>(yoe) + era * 400 + (m <= 2));
}

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double distance_m(const LocalPoint& a, const LocalPoint& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

RegionGrid::RegionGrid(int rows, int cols, double cell_width_m,
                       double cell_height_m, LonLat origin)
    : rows_(rows),
      cols_(cols),
      cell_width_m_(cell_width_m),
      cell_height_m_(cell_height_m),
      origin_(origin) {
  if (rows < 1 || cols < 1)
    throw std::invalid_argument("RegionGrid: rows and cols must be >= 1");
  if (!(cell_width_m > 0.0) || !(cell_height_m > 0.0))
    throw std::invalid_argument("RegionGrid: cell dimensions must be > 0");
  const double deg = std::numbers::pi / 180.0;
  meters_per_deg_lat_ = kEarthRadiusM * deg;
  meters_per_deg_lon_ = kEarthRadiusM * deg * std::cos(origin.lat * deg);
}

LocalPoint RegionGrid::to_local(const LonLat& loc) const {
  return {(loc.lon - origin_.lon) * meters_per_deg_lon_,
          (loc.lat - origin_.lat) * meters_per_deg_lat_};
}

LonLat RegionGrid::to_lonlat(const LocalPoint& p) const {
  return {origin_.lon + p.x / meters_per_deg_lon_,
          origin_.lat + p.y / meters_per_deg_lat_};
}

std::optional<int> RegionGrid::region_of(const LonLat& loc) const {
  return region_of(to_local(loc));
}

std::optional<int> RegionGrid::region_of(const LocalPoint& p) const {
  if (!std::isfinite(p.x) || !std::isfinite(p.y)) return std::nullopt;
  // Tolerate float round-off of the projection right at the origin.
  constexpr double kEdgeTol = 1e-6;
  double x = p.x, y = p.y;
  if (x < 0.0 && x > -kEdgeTol) x = 0.0;
  if (y < 0.0 && y > -kEdgeTol) y = 0.0;
  if (x < 0.0 || y < 0.0) return std::nullopt;
  const auto col = static_cast<long long>(std::floor(x / cell_width_m_));
  const auto row = static_cast<long long>(std::floor(y / cell_height_m_));
  if (col >= cols_ || row >= rows_) return std::nullopt;
  return index(static_cast<int>(row), static_cast<int>(col));
}

LocalPoint RegionGrid::cell_center(int region) const {
  check_region(region);
  return {(col_of(region) + 0.5) * cell_width_m_,
          (row_of(region) + 0.5) * cell_height_m_};
}

LocalPoint RegionGrid::sample_point(int region, Rng& rng) const {
  check_region(region);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double fx = u(rng);
  const double fy = u(rng);
  return {(col_of(region) + fx) * cell_width_m_,
          (row_of(region) + fy) * cell_height_m_};
}

std::vector<int> RegionGrid::neighbors(int region) const {
  check_region(region);
  const int r = row_of(region), c = col_of(region);
  std::vector<int> out;
  out.reserve(8);
  for (int dr = -1; dr <= 1; ++dr) {
    for (int dc = -1; dc <= 1; ++dc) {
      if (dr == 0 && dc == 0) continue;
      const int rr = r + dr, cc = c + dc;
      if (rr < 0 || rr >= rows_ || cc < 0 || cc >= cols_) continue;
      out.push_back(index(rr, cc));
    }
  }
  return out;
}

bool RegionGrid::adjacent(int a, int b) const {
  check_region(a);
  check_region(b);
  if (a == b) return false;
  return std::abs(row_of(a) - row_of(b)) <= 1 && std::abs(col_of(a) - col_of(b)) <= 1;
}

int RegionGrid::manhattan(int a, int b) const {
  check_region(a);
  check_region(b);
  return std::abs(row_of(a) - row_of(b)) + std::abs(col_of(a) - col_of(b));
}

double RegionGrid::cell_diagonal_m() const {
  return std::hypot(cell_width_m_, cell_height_m_);
}

double RegionGrid::calibrated_alpha(double max_cost) const {
  const double d = max_walk_distance_m();
  return max_cost / (d * d);
}

void RegionGrid::check_region(int region) const {
  if (region < 0 || region >= size())
    throw std::out_of_range("region index " + std::to_string(region) +
                            " outside grid of " + std::to_string(size()));
}

double walking_cost(double x_m, double alpha) { return alpha * x_m * x_m; }

int weekday_of(MinuteStamp t) {
  const std::int64_t days = floor_div(t, 24 * 60);
  // 1970-01-01 was a Thursday (index 3 with Monday = 0).
  const std::int64_t w = (days + 3) % 7;
  return static_cast<int>(w < 0 ? w + 7 : w);
}

int minute_of_day(MinuteStamp t) {
  const std::int64_t m = t % (24 * 60);
  return static_cast<int>(m < 0 ? m + 24 * 60 : m);
}

std::optional<MinuteStamp> parse_timestamp(const std::string& text) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
  char sep = 0;
  int consumed = 0;
  const int got = std::sscanf(text.c_str(), "%4d-%2d-%2d%c%2d:%2d%n", &y, &mo,
                              &d, &sep, &h, &mi, &consumed);
  if (got < 6) return std::nullopt;
  if (sep != 'T' && sep != ' ') return std::nullopt;
  std::string rest = text.substr(static_cast<std::size_t>(consumed));
  if (!rest.empty()) {
    int c2 = 0;
    if (std::sscanf(rest.c_str(), ":%2d%n", &s, &c2) == 1) rest = rest.substr(static_cast<std::size_t>(c2));
    // Fractional seconds or a zone designator are tolerated and ignored.
    if (!rest.empty() && rest[0] != '.' && rest[0] != 'Z' && rest[0] != '+' &&
        rest[0] != '-')
      return std::nullopt;
  }
  if (mo < 1 || mo > 12 || d < 1 || d > 31 || h < 0 || h > 23 || mi < 0 ||
      mi > 59 || s < 0 || s > 60)
    return std::nullopt;
  const std::int64_t days = days_from_civil(y, static_cast<unsigned>(mo), static_cast<unsigned>(d));
  int yy = 0;
  unsigned mm = 0, dd = 0;
  civil_from_days(days, yy, mm, dd);
  if (yy != y || static_cast<int>(mm) != mo || static_cast<int>(dd) != d)
    return std::nullopt;  // e.g. February 30th
  return days * 24 * 60 + h * 60 + mi;
}

std::string format_timestamp(MinuteStamp t) {
  const std::int64_t days = floor_div(t, 24 * 60);
  int y = 0;
  unsigned m = 0, d = 0;
  civil_from_days(days, y, m, d);
  const int mod = minute_of_day(t);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d", y, m, d, mod / 60,
                mod % 60);
  return buf;
}

DemandTensor::DemandTensor(int slots, int regions)
    : slots_(slots), regions_(regions) {
  if (slots < 1 || regions < 1)
    throw std::invalid_argument("DemandTensor: slots and regions must be >= 1");
  data_.assign(static_cast<std::size_t>(slots) * regions * regions, 0);
}

std::size_t DemandTensor::offset(int t, int i, int l) const {
  return (static_cast<std::size_t>(t) * regions_ + i) * regions_ + l;
}

int DemandTensor::origin_total(int t, int i) const {
  int sum = 0;
  for (int l = 0; l < regions_; ++l) sum += at(t, i, l);
  return sum;
}

int DemandTensor::slot_total(int t) const {
  int sum = 0;
  for (int i = 0; i < regions_; ++i) sum += origin_total(t, i);
  return sum;
}

std::int64_t DemandTensor::region_total(int i) const {
  std::int64_t sum = 0;
  for (int t = 0; t < slots_; ++t) sum += origin_total(t, i);
  return sum;
}

std::int64_t DemandTensor::total() const {
  std::int64_t sum = 0;
  for (int v : data_) sum += v;
  return sum;
}

Observation::Observation(int regions_, int window_)
    : regions(regions_),
      window(window_),
      supply(static_cast<std::size_t>(regions_), 0.0),
      last_demand(static_cast<std::size_t>(regions_), 0.0),
      last_arrival(static_cast<std::size_t>(regions_), 0.0),
      last_expense(static_cast<std::size_t>(regions_), 0.0),
      unservice(static_cast<std::size_t>(regions_) * window_, 0.0) {}

std::vector<double> Observation::flatten() const {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(flat_size()));
  for (int i = 0; i < regions; ++i) {
    out.push_back(supply[i]);
    out.push_back(last_demand[i]);
    out.push_back(last_arrival[i]);
    out.push_back(last_expense[i]);
    for (int k = 0; k < window; ++k) out.push_back(unservice[i * window + k]);
  }
  out.push_back(remaining_budget);
  return out;
}

Observation Observation::unflatten(const std::vector<double>& flat, int regions,
                                   int window) {
  Observation obs(regions, window);
  if (static_cast<int>(flat.size()) != obs.flat_size())
    throw std::invalid_argument("Observation::unflatten: size mismatch");
  std::size_t p = 0;
  for (int i = 0; i < regions; ++i) {
    obs.supply[i] = flat[p++];
    obs.last_demand[i] = flat[p++];
    obs.last_arrival[i] = flat[p++];
    obs.last_expense[i] = flat[p++];
    for (int k = 0; k < window; ++k) obs.unservice[i * window + k] = flat[p++];
  }
  obs.remaining_budget = flat[p];
  return obs;
}

bool Observation::all_finite() const {
  for (double v : flatten())
    if (!std::isfinite(v)) return false;
  return true;
}

PriceAction PriceAction::clipped(double p_max) const {
  PriceAction out = *this;
  for (double& p : out.price) {
    if (!std::isfinite(p)) p = 0.0;
    p = std::clamp(p, 0.0, p_max);
  }
  return out;
}

int SystemState::parked_total() const {
  int sum = 0;
  for (const auto& r : bikes) sum += static_cast<int>(r.size());
  return sum;
}

}  // namespace rebal
