#include "rebal/sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

#include <json.hpp>

namespace rebal {

namespace {

struct ArrivalLater {
  bool operator()(const TripInTransit& a, const TripInTransit& b) const {
    if (a.arrival_minute != b.arrival_minute) return a.arrival_minute > b.arrival_minute;
    return a.sequence > b.sequence;
  }
};

constexpr std::uint64_t kPoolSeed = 0xb1cec0de;

}  // namespace

double SimConfig::effective_alpha() const {
  return alpha > 0.0 ? alpha : grid.calibrated_alpha(p_max);
}

void SimConfig::validate() const {
  const int n = grid.size();
  if (demand.regions() != n)
    throw std::invalid_argument("SimConfig: demand region count does not match grid");
  if (demand.slots() < 1) throw std::invalid_argument("SimConfig: demand has no slots");
  if (total_supply < 0) throw std::invalid_argument("SimConfig: negative total supply");
  if (!(budget >= 0.0) || !std::isfinite(budget))
    throw std::invalid_argument("SimConfig: budget must be finite and >= 0");
  if (days < 1) throw std::invalid_argument("SimConfig: days must be >= 1");
  if (minutes_per_slot < 1) throw std::invalid_argument("SimConfig: minutes_per_slot must be >= 1");
  if (window < 1) throw std::invalid_argument("SimConfig: window must be >= 1");
  if (!(p_max >= 0.0)) throw std::invalid_argument("SimConfig: p_max must be >= 0");
  if (!location_pool.empty() && static_cast<int>(location_pool.size()) != n)
    throw std::invalid_argument("SimConfig: location pool size does not match grid");
  if (!initial_bikes.empty()) {
    if (static_cast<int>(initial_bikes.size()) != n)
      throw std::invalid_argument("SimConfig: initial bikes size does not match grid");
    std::size_t count = 0;
    for (const auto& r : initial_bikes) count += r.size();
    if (count != static_cast<std::size_t>(total_supply))
      throw std::invalid_argument("SimConfig: initial bikes do not sum to total supply");
  } else if (total_supply > 0 && demand.total() == 0)
    throw std::invalid_argument("SimConfig: bikes cannot be placed with all-zero demand");
  if (cost_mode == CostMode::kFixedMatrix) {
    if (pair_costs.regions != n || pair_costs.slots != demand.slots() ||
        pair_costs.cost.size() != static_cast<std::size_t>(pair_costs.slots) * n * n)
      throw std::invalid_argument("SimConfig: pair cost table has wrong shape");
  }
}

int Census::total() const {
  int sum = in_transit;
  for (int s : supply) sum += s;
  return sum;
}

int EpisodeLog::unsatisfied_total() const {
  int sum = 0;
  for (const auto& s : slots)
    for (int u : s.unsatisfied) sum += u;
  return sum;
}

int EpisodeLog::reward_total() const {
  int sum = 0;
  for (const auto& s : slots) sum += s.reward;
  return sum;
}

double EpisodeLog::spent_total() const {
  double sum = 0.0;
  for (const auto& s : slots)
    for (double e : s.expenses) sum += e;
  return sum;
}

const Census& EpisodeLog::final_census() const {
  return slots.empty() ? initial_census : slots.back().census;
}

void write_episode_jsonl(const EpisodeLog& log, std::ostream& out) {
  for (const auto& s : log.slots) {
    nlohmann::json j;
    j["slot"] = s.slot;
    j["reward"] = s.reward;
    j["requests"] = s.requests;
    j["unsatisfied"] = s.unsatisfied;
    j["expenses"] = s.expenses;
    j["remaining_budget"] = s.remaining_budget;
    j["census"] = {{"supply", s.census.supply}, {"in_transit", s.census.in_transit}};
    out << j.dump() << '\n';
  }
}

Simulator::Simulator(SimConfig config) : config_(std::move(config)) {
  config_.validate();
  alpha_ = config_.effective_alpha();
  const int n = config_.grid.size();
  neighbors_.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) neighbors_[i] = config_.grid.neighbors(i);
  pool_ = config_.location_pool.empty()
              ? uniform_location_pool(config_.grid, 64, kPoolSeed)
              : config_.location_pool;
  reset(0);
}

Observation Simulator::reset(std::uint64_t seed) {
  const int n = regions();
  rng_.seed(seed);
  state_ = SystemState{};
  state_.bikes.assign(static_cast<std::size_t>(n), {});
  if (!config_.initial_bikes.empty()) {
    for (int i = 0; i < n; ++i)
      for (const auto& p : config_.initial_bikes[i]) state_.bikes[i].push_back({p});
  } else if (config_.total_supply > 0) {
    const auto placed = initial_bike_distribution(config_.total_supply, config_.demand, pool_,
                                                  mix_seed(seed, 1));
    for (int i = 0; i < n; ++i)
      for (const auto& p : placed[i]) state_.bikes[i].push_back({p});
  }
  state_.remaining_budget = config_.budget;
  state_.unservice_window.assign(static_cast<std::size_t>(n) * config_.window, 0.0);
  state_.last_demand.assign(static_cast<std::size_t>(n), 0);
  state_.last_arrival.assign(static_cast<std::size_t>(n), 0);
  state_.last_expense.assign(static_cast<std::size_t>(n), 0.0);
  step_ = 0;
  trip_sequence_ = 0;
  log_ = EpisodeLog{};
  log_.initial_census = bike_census();
  return observation();
}

Census Simulator::bike_census() const {
  Census c;
  c.supply.reserve(state_.bikes.size());
  for (const auto& r : state_.bikes) c.supply.push_back(static_cast<int>(r.size()));
  c.in_transit = static_cast<int>(state_.in_transit.size());
  return c;
}

Observation Simulator::observation() const {
  const int n = regions();
  Observation obs(n, config_.window);
  for (int i = 0; i < n; ++i) {
    obs.supply[i] = static_cast<double>(state_.bikes[i].size());
    obs.last_demand[i] = state_.last_demand[i];
    obs.last_arrival[i] = state_.last_arrival[i];
    obs.last_expense[i] = state_.last_expense[i];
  }
  obs.unservice = state_.unservice_window;
  obs.remaining_budget = state_.remaining_budget;
  return obs;
}

void Simulator::process_arrivals(int minute) {
  auto& heap = state_.in_transit;
  while (!heap.empty() && heap.front().arrival_minute <= minute) {
    std::pop_heap(heap.begin(), heap.end(), ArrivalLater{});
    const TripInTransit trip = heap.back();
    heap.pop_back();
    state_.bikes[trip.destination].push_back({trip.dropoff});
    ++slot_arrivals_[trip.destination];
  }
}

void Simulator::drain_in_transit() {
  process_arrivals(std::numeric_limits<int>::max());
}

void Simulator::depart(int bike_region, int destination, int minute) {
  int duration = 0;
  const int slot_start = step_ * config_.minutes_per_slot;
  if (config_.travel_mode == TravelMode::kSameSlot) {
    duration = slot_start + config_.minutes_per_slot - minute;
  } else if (config_.travel) {
    duration = config_.travel->sample(bike_region, destination, rng_);
  } else {
    duration = TravelTimeModel::kMinutesPerCell *
               std::max(1, config_.grid.manhattan(bike_region, destination));
  }
  TripInTransit trip;
  trip.arrival_minute = minute + std::max(1, duration);
  trip.sequence = trip_sequence_++;
  trip.destination = destination;
  trip.dropoff = config_.grid.sample_point(destination, rng_);
  state_.in_transit.push_back(trip);
  std::push_heap(state_.in_transit.begin(), state_.in_transit.end(), ArrivalLater{});
}

int Simulator::nearest_bike(int region, const LocalPoint& user) const {
  const auto& bikes = state_.bikes[region];
  int best = -1;
  double best_d = 0.0;
  for (std::size_t k = 0; k < bikes.size(); ++k) {
    const double d = distance_m(bikes[k].pos, user);
    if (best < 0 || d < best_d) {
      best = static_cast<int>(k);
      best_d = d;
    }
  }
  return best;
}

std::optional<Offer> Simulator::best_offer(int origin, const LocalPoint& user, double price,
                                           int slot_of_day) const {
  std::optional<Offer> best;
  double best_utility = 0.0;
  for (int j : neighbors_[origin]) {
    const int k = nearest_bike(j, user);
    if (k < 0) continue;
    Offer o;
    o.target_region = j;
    o.bike_index = k;
    o.bike_pos = state_.bikes[j][k].pos;
    o.distance_m = distance_m(o.bike_pos, user);
    o.cost = config_.cost_mode == CostMode::kFixedMatrix
                 ? config_.pair_costs.at(slot_of_day, origin, j)
                 : walking_cost(o.distance_m, alpha_);
    o.price = price;
    const double utility = price - o.cost;
    // Neighbors are visited in ascending index order, so strict comparisons
    // leave ties with the lower region index.
    if (!best || utility > best_utility ||
        (utility == best_utility && o.distance_m < best->distance_m)) {
      best = o;
      best_utility = utility;
    }
  }
  return best;
}

StepOutcome Simulator::step(const PriceAction& raw_action) {
  if (done()) throw std::logic_error("Simulator::step called after episode end");
  const int n = regions();
  if (raw_action.size() != n)
    throw std::invalid_argument("Simulator::step: action has wrong region count");
  const PriceAction action = raw_action.clipped(config_.p_max);

  const int slot_of_day = step_ % config_.slots_per_day();
  const int slot_start = step_ * config_.minutes_per_slot;

  StepOutcome out;
  out.served.assign(static_cast<std::size_t>(n), 0);
  out.unsatisfied.assign(static_cast<std::size_t>(n), 0);
  out.demand.assign(static_cast<std::size_t>(n), 0);
  out.arrivals.assign(static_cast<std::size_t>(n), 0);
  out.expenses.assign(static_cast<std::size_t>(n), 0.0);
  out.no_local_bike.assign(static_cast<std::size_t>(n), 0);
  out.offered.assign(static_cast<std::size_t>(n), 0);
  out.accepted.assign(static_cast<std::size_t>(n), 0);
  slot_arrivals_.assign(static_cast<std::size_t>(n), 0);

  std::vector<Request> requests;
  std::uniform_int_distribution<int> minute_of_slot(0, config_.minutes_per_slot - 1);
  for (int i = 0; i < n; ++i) {
    for (int l = 0; l < n; ++l) {
      const int d = config_.demand.at(slot_of_day, i, l);
      for (int k = 0; k < d; ++k)
        requests.push_back({slot_start + minute_of_slot(rng_), i, l});
    }
  }
  std::shuffle(requests.begin(), requests.end(), rng_);
  std::stable_sort(requests.begin(), requests.end(),
                   [](const Request& a, const Request& b) { return a.minute < b.minute; });

  std::size_t next = 0;
  for (int minute = slot_start; minute < slot_start + config_.minutes_per_slot; ++minute) {
    process_arrivals(minute);
    for (; next < requests.size() && requests[next].minute == minute; ++next) {
      const Request& req = requests[next];
      const int i = req.origin;
      ++out.demand[i];
      const LocalPoint user = config_.grid.sample_point(i, rng_);
      auto& local = state_.bikes[i];
      if (!local.empty()) {
        const int k = nearest_bike(i, user);
        local[k] = local.back();
        local.pop_back();
        depart(i, req.destination, minute);
        ++out.served[i];
        continue;
      }
      ++out.no_local_bike[i];
      const double price = action.price[i];
      if (price > 0.0 && state_.remaining_budget >= price) {
        const auto offer = best_offer(i, user, price, slot_of_day);
        if (offer) {
          ++out.offered[i];
          if (price - offer->cost >= 0.0) {
            auto& there = state_.bikes[offer->target_region];
            there[offer->bike_index] = there.back();
            there.pop_back();
            state_.remaining_budget -= price;
            out.expenses[i] += price;
            ++out.accepted[i];
            ++out.served[i];
            depart(offer->target_region, req.destination, minute);
            continue;
          }
        }
      }
      ++out.unsatisfied[i];
    }
    if (observer_) observer_(minute, *this);
  }

  ++step_;
  if (done()) {
    drain_in_transit();
    if (observer_) observer_(slot_start + config_.minutes_per_slot, *this);
  }
  out.arrivals = slot_arrivals_;

  const int w = config_.window;
  for (int i = 0; i < n; ++i) {
    double* win = &state_.unservice_window[static_cast<std::size_t>(i) * w];
    std::copy(win + 1, win + w, win);
    win[w - 1] = out.demand[i] > 0
                     ? static_cast<double>(out.unsatisfied[i]) / out.demand[i]
                     : 0.0;
    state_.last_demand[i] = out.demand[i];
    state_.last_arrival[i] = out.arrivals[i];
    state_.last_expense[i] = out.expenses[i];
    out.reward += out.served[i];
    out.requests += out.demand[i];
  }

  SlotRecord rec;
  rec.slot = step_ - 1;
  rec.reward = out.reward;
  rec.requests = out.requests;
  rec.unsatisfied = out.unsatisfied;
  rec.expenses = out.expenses;
  rec.remaining_budget = state_.remaining_budget;
  rec.census = bike_census();
  log_.slots.push_back(std::move(rec));

  out.next_observation = observation();
  out.episode_done = done();
  return out;
}

}  // namespace rebal
