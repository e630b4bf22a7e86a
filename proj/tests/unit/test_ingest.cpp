#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <gtest/gtest.h>

#include "rebal/ingest.hpp"

using namespace rebal;

namespace {

RegionGrid grid3() { return RegionGrid(3, 3, 500.0, 500.0, {116.30, 39.90}); }

std::string write_temp(const std::string& name, const std::string& body) {
  const auto path = std::filesystem::temp_directory_path() / name;
  std::ofstream(path) << body;
  return path.string();
}

std::string csv_row(const RegionGrid& g, const std::string& id, const std::string& start,
                    const std::string& end, LocalPoint a, LocalPoint b) {
  const LonLat s = g.to_lonlat(a), e = g.to_lonlat(b);
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s,b%s,u%s,%s,%.9f,%.9f,%s,%.9f,%.9f,\"[(1,2),(3,4)]\"\n",
                id.c_str(), id.c_str(), id.c_str(), start.c_str(), s.lon, s.lat, end.c_str(),
                e.lon, e.lat);
  return buf;
}

const char* kHeader =
    "order_id,bike_id,user_id,start_time,start_lng,start_lat,end_time,end_lng,end_lat,trace\n";

TripRecord trip(const RegionGrid& g, const std::string& start, int from, int to, int minutes) {
  TripRecord t;
  t.start_time = *parse_timestamp(start);
  t.end_time = t.start_time + minutes;
  t.start_loc = g.to_lonlat(g.cell_center(from));
  t.end_loc = g.to_lonlat(g.cell_center(to));
  return t;
}

}  // namespace

TEST(ParseTrajectories, CleanFile) {
  const auto g = grid3();
  std::string body = kHeader;
  body += csv_row(g, "1", "2017-05-08 08:30:00", "2017-05-08 08:41:00", {100, 100}, {900, 900});
  body += csv_row(g, "2", "2017-05-08 09:00:00", "2017-05-08 09:05:00", {600, 100}, {700, 200});
  body += csv_row(g, "3", "2017-05-09 18:00:00", "2017-05-09 18:20:00", {1400, 1400}, {50, 50});
  const auto parsed = parse_trajectories(write_temp("rebal_clean.csv", body), g);
  EXPECT_EQ(parsed.trips.size(), 3u);
  EXPECT_EQ(parsed.report.rows_read, 3);
  EXPECT_EQ(parsed.report.dropped_total(), 0);
  EXPECT_EQ(parsed.trips[0].order_id, "1");
  EXPECT_EQ(parsed.trips[0].end_time - parsed.trips[0].start_time, 11);
}

TEST(ParseTrajectories, DropsBadRowsWithReasons) {
  const auto g = grid3();
  std::string body = kHeader;
  body += csv_row(g, "1", "2017-05-08 08:30:00", "2017-05-08 08:20:00", {100, 100}, {900, 900});
  body += csv_row(g, "2", "2017-05-08 09:00:00", "2017-05-08 09:05:00", {-50, 100}, {700, 200});
  body += csv_row(g, "3", "not a time", "2017-05-09 18:20:00", {100, 100}, {50, 50});
  body += "4,b,u,2017-05-08 08:30:00\n";
  body += csv_row(g, "5", "2017-05-08 09:00:00", "2017-05-08 09:05:00", {100, 100}, {700, 200});
  const auto parsed = parse_trajectories(write_temp("rebal_bad.csv", body), g);
  EXPECT_EQ(parsed.trips.size(), 1u);
  EXPECT_EQ(parsed.report.dropped.at("negative duration"), 1);
  EXPECT_EQ(parsed.report.dropped.at("out of area"), 1);
  EXPECT_EQ(parsed.report.dropped.at("malformed timestamp"), 1);
  EXPECT_EQ(parsed.report.dropped.at("malformed row"), 1);
}

TEST(ParseTrajectories, HeaderOrderAndErrors) {
  const auto g = grid3();
  const LonLat s = g.to_lonlat({100, 100}), e = g.to_lonlat({700, 700});
  std::string body = "end_lat,end_lng,start_lat,start_lng,end_time,start_time,user_id,bike_id,order_id\n";
  char buf[256];
  std::snprintf(buf, sizeof buf, "%.9f,%.9f,%.9f,%.9f,2017-05-08 08:50,2017-05-08 08:30,u,b,o\n",
                e.lat, e.lon, s.lat, s.lon);
  body += buf;
  const auto parsed = parse_trajectories(write_temp("rebal_reordered.csv", body), g);
  ASSERT_EQ(parsed.trips.size(), 1u);
  EXPECT_EQ(g.region_of(parsed.trips[0].end_loc), 4);

  EXPECT_THROW(parse_trajectories("/nonexistent/trips.csv", g), std::runtime_error);
  EXPECT_THROW(parse_trajectories(write_temp("rebal_nocol.csv", "order_id,bike_id\n1,2\n"), g),
               std::runtime_error);
}

TEST(AggregateWeekdayDemand, SingleTripAndWeekends) {
  const auto g = grid3();
  const auto monday = trip(g, "2017-05-08 08:30", 2, 4, 12);
  auto agg = aggregate_weekday_demand({monday}, g);
  EXPECT_EQ(agg.demand.at(8, 2, 4), 1);
  EXPECT_EQ(agg.demand.total(), 1);
  EXPECT_EQ(agg.durations.observations(2, 4), 1);

  const auto saturday = trip(g, "2017-05-13 08:30", 2, 4, 12);
  EXPECT_EQ(aggregate_weekday_demand({saturday}, g).demand.total(), 0);
  EXPECT_EQ(aggregate_weekday_demand({monday, monday}, g).demand.at(8, 2, 4), 2);
  EXPECT_THROW(aggregate_weekday_demand({}, g), std::invalid_argument);
}

TEST(AggregateWeekdayDemand, PermutationInvariant) {
  const auto g = grid3();
  std::vector<TripRecord> trips;
  Rng rng(3);
  std::uniform_int_distribution<int> region(0, 8), minute(0, 1439), day(8, 14);
  for (int k = 0; k < 200; ++k) {
    char ts[32];
    std::snprintf(ts, sizeof ts, "2017-05-%02d 00:00", day(rng));
    auto t = trip(g, ts, region(rng), region(rng), 5 + k % 20);
    const int m = minute(rng);
    t.start_time += m;
    t.end_time += m;
    trips.push_back(t);
  }
  const auto a = aggregate_weekday_demand(trips, g);
  std::shuffle(trips.begin(), trips.end(), rng);
  const auto b = aggregate_weekday_demand(trips, g);
  EXPECT_EQ(a.demand, b.demand);
}

TEST(TravelTimeModel, HistogramAndFallback) {
  const auto g = grid3();
  TravelTimeModel m(g);
  m.add(0, 1, 7);
  Rng rng(1);
  EXPECT_EQ(m.sample(0, 1, rng), 7);
  EXPECT_EQ(m.sample(0, 8, rng), 4 * 4);
  EXPECT_EQ(m.sample(3, 3, rng), 4);
}

TEST(CorrectLostDemand, InflationAndCap) {
  DemandTensor d(1, 2);
  d.at(0, 0, 1) = 10;
  d.at(0, 1, 0) = 10;
  const auto same = correct_lost_demand(d, {{0.0, 0.0}});
  EXPECT_EQ(same, d);
  const auto out = correct_lost_demand(d, {{0.5, 1.0}});
  EXPECT_EQ(out.at(0, 0, 1), 20);
  EXPECT_EQ(out.at(0, 1, 0), 30);
  const auto heavy = correct_lost_demand(d, {{0.9, 0.2}});
  EXPECT_EQ(heavy.at(0, 0, 1), 30);
  EXPECT_EQ(heavy.at(0, 1, 0), 13);
  for (std::size_t k = 0; k < d.raw().size(); ++k) EXPECT_GE(heavy.raw()[k], d.raw()[k]);
}

TEST(SynthesizeDemand, DeterministicConservedBimodal) {
  SyntheticDemandParams p;
  p.daily_volume = 3000;
  p.seed = 17;
  const auto a = synthesize_demand(p);
  const auto b = synthesize_demand(p);
  EXPECT_EQ(a.demand, b.demand);
  const int n = p.regions;
  EXPECT_LE(std::abs(a.demand.total() - 3000), static_cast<std::int64_t>(n) * n * p.slots);
  EXPECT_GT(a.demand.slot_total(8), a.demand.slot_total(12));
  EXPECT_GT(a.demand.slot_total(18), a.demand.slot_total(12));
  p.seed = 18;
  EXPECT_NE(synthesize_demand(p).demand, a.demand);
}

TEST(SynthesizeDemand, CommuteDirection) {
  SyntheticDemandParams p;
  p.seed = 4;
  const auto s = synthesize_demand(p);
  auto flow = [&](int t, const std::vector<int>& from, const std::vector<int>& to) {
    int sum = 0;
    for (int i : from)
      for (int l : to) sum += s.demand.at(t, i, l);
    return sum;
  };
  EXPECT_GT(flow(8, s.residential, s.work), flow(8, s.work, s.residential));
  EXPECT_GT(flow(18, s.work, s.residential), flow(18, s.residential, s.work));
}

TEST(Apportion, LargestRemainder) {
  EXPECT_EQ(apportion(10, {0.5, 0.3, 0.2}), (std::vector<int>{5, 3, 2}));
  EXPECT_EQ(apportion(10, {1, 1, 1}), (std::vector<int>{4, 3, 3}));
  EXPECT_EQ(apportion(0, {1, 2}), (std::vector<int>{0, 0}));
  EXPECT_THROW(apportion(3, {0, 0}), std::invalid_argument);
}

TEST(InitialBikes, ProportionalPlacement) {
  const RegionGrid g(1, 3, 500, 500);
  DemandTensor d(1, 3);
  d.at(0, 0, 1) = 5;
  d.at(0, 1, 2) = 3;
  d.at(0, 2, 0) = 2;
  EXPECT_EQ(initial_bike_counts(10, d), (std::vector<int>{5, 3, 2}));
  EXPECT_EQ(initial_bike_counts(0, d), (std::vector<int>{0, 0, 0}));
  const auto pool = uniform_location_pool(g, 8, 1);
  const auto placed = initial_bike_distribution(37, d, pool, 9);
  int total = 0;
  for (int i = 0; i < 3; ++i) {
    total += static_cast<int>(placed[i].size());
    for (const auto& p : placed[i]) EXPECT_EQ(g.region_of(p), i);
  }
  EXPECT_EQ(total, 37);
  EXPECT_THROW(initial_bike_counts(5, DemandTensor(1, 3)), std::invalid_argument);
}

TEST(DefaultSupply, RoundedRatio) {
  EXPECT_EQ(default_total_supply(20000000), 3650000);
  EXPECT_EQ(default_total_supply(0), 0);
  EXPECT_EQ(default_total_supply(1000), 183);
}
