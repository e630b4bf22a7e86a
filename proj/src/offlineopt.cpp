#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>

#include <json.hpp>

#include "rebal/offlineopt.hpp"

namespace rebal {

// ------------------------------------------------------------- IlpInstance

IlpInstance IlpInstance::from_grid(const RegionGrid& grid, DemandTensor demand,
                                   std::vector<int> supply, PairCostTable costs,
                                   double budget) {
  IlpInstance inst;
  inst.slots = demand.slots();
  inst.regions = grid.size();
  for (int i = 0; i < grid.size(); ++i) inst.neighbors.push_back(grid.neighbors(i));
  inst.demand = std::move(demand);
  inst.supply = std::move(supply);
  inst.costs = std::move(costs);
  inst.budget = budget;
  inst.validate();
  return inst;
}

void IlpInstance::validate() const {
  if (slots < 1 || regions < 1) throw std::invalid_argument("IlpInstance: empty instance");
  if (demand.slots() != slots || demand.regions() != regions)
    throw std::invalid_argument("IlpInstance: demand shape mismatch");
  if (static_cast<int>(supply.size()) != regions)
    throw std::invalid_argument("IlpInstance: supply size mismatch");
  if (static_cast<int>(neighbors.size()) != regions)
    throw std::invalid_argument("IlpInstance: neighbor list size mismatch");
  if (costs.slots != slots || costs.regions != regions ||
      costs.cost.size() != static_cast<std::size_t>(slots) * regions * regions)
    throw std::invalid_argument("IlpInstance: cost table shape mismatch");
  if (!(budget >= 0.0)) throw std::invalid_argument("IlpInstance: negative budget");
  for (int s : supply)
    if (s < 0) throw std::invalid_argument("IlpInstance: negative supply");
  for (int v : demand.raw())
    if (v < 0) throw std::invalid_argument("IlpInstance: negative demand");
  for (int i = 0; i < regions; ++i)
    for (int j : neighbors[i])
      if (j < 0 || j >= regions || j == i)
        throw std::invalid_argument("IlpInstance: bad neighbor index");
  for (int t = 0; t < slots; ++t)
    for (int i = 0; i < regions; ++i)
      for (int j : neighbors[i])
        if (!(costs.at(t, i, j) >= 0.0) || !std::isfinite(costs.at(t, i, j)))
          throw std::invalid_argument("IlpInstance: bad neighbor cost");
}

IlpInstance IlpInstance::window(int first, int count, std::vector<int> start_supply,
                                double start_budget) const {
  if (first < 0 || count < 1 || first + count > slots)
    throw std::invalid_argument("IlpInstance::window: out of range");
  IlpInstance w;
  w.slots = count;
  w.regions = regions;
  w.neighbors = neighbors;
  w.demand = DemandTensor(count, regions);
  w.costs.slots = count;
  w.costs.regions = regions;
  w.costs.cost.assign(static_cast<std::size_t>(count) * regions * regions, 0.0);
  for (int t = 0; t < count; ++t)
    for (int i = 0; i < regions; ++i)
      for (int l = 0; l < regions; ++l) {
        w.demand.at(t, i, l) = demand.at(first + t, i, l);
        w.costs.at(t, i, l) = costs.at(first + t, i, l);
      }
  w.supply = std::move(start_supply);
  w.budget = start_budget;
  w.validate();
  return w;
}

// ----------------------------------------------------------- bike program

namespace {

struct Served {
  int t, i, l;
};
struct Pickup {
  int t, i, j;
};

/// Variable layout of the aggregated program: served variables first, then
/// pickups. Zero-demand origins get neither.
struct BikeLayout {
  std::vector<Served> served;
  std::vector<Pickup> pickups;

  explicit BikeLayout(const IlpInstance& inst) {
    for (int t = 0; t < inst.slots; ++t)
      for (int i = 0; i < inst.regions; ++i) {
        if (inst.demand.origin_total(t, i) == 0) continue;
        for (int l = 0; l < inst.regions; ++l)
          if (inst.demand.at(t, i, l) > 0) served.push_back({t, i, l});
        pickups.push_back({t, i, i});
        for (int j : inst.neighbors[i]) pickups.push_back({t, i, j});
      }
  }
  int size() const { return static_cast<int>(served.size() + pickups.size()); }
  int pickup_var(std::size_t k) const { return static_cast<int>(served.size() + k); }
};

}  // namespace

LinearProgram build_bike_program(const IlpInstance& inst) {
  inst.validate();
  const BikeLayout layout(inst);
  const int n = inst.regions;
  LinearProgram lp(layout.size());
  for (std::size_t k = 0; k < layout.served.size(); ++k) {
    const auto& s = layout.served[k];
    lp.objective[k] = 1.0;
    lp.upper[k] = inst.demand.at(s.t, s.i, s.l);
  }
  for (std::size_t k = 0; k < layout.pickups.size(); ++k) {
    const auto& p = layout.pickups[k];
    lp.upper[layout.pickup_var(k)] = inst.demand.origin_total(p.t, p.i);
  }

  // Coupling: users served from i never exceed the bikes they picked up.
  {
    std::vector<std::vector<std::pair<int, double>>> rows(
        static_cast<std::size_t>(inst.slots) * n);
    for (std::size_t k = 0; k < layout.served.size(); ++k) {
      const auto& s = layout.served[k];
      rows[static_cast<std::size_t>(s.t) * n + s.i].push_back({static_cast<int>(k), 1.0});
    }
    for (std::size_t k = 0; k < layout.pickups.size(); ++k) {
      const auto& p = layout.pickups[k];
      rows[static_cast<std::size_t>(p.t) * n + p.i].push_back({layout.pickup_var(k), -1.0});
    }
    for (auto& r : rows)
      if (!r.empty()) lp.add_row(std::move(r), 0.0);
  }

  // Supply: pickups from j in slot t are bounded by S_j(0) plus the net flow
  // into j over the earlier slots.
  for (int t = 0; t < inst.slots; ++t)
    for (int j = 0; j < n; ++j) {
      std::vector<std::pair<int, double>> terms;
      bool picks_now = false;
      for (std::size_t k = 0; k < layout.pickups.size(); ++k) {
        const auto& p = layout.pickups[k];
        if (p.j != j || p.t > t) continue;
        terms.push_back({layout.pickup_var(k), 1.0});
        if (p.t == t) picks_now = true;
      }
      if (!picks_now) continue;
      for (std::size_t k = 0; k < layout.served.size(); ++k) {
        const auto& s = layout.served[k];
        if (s.l == j && s.t < t) terms.push_back({static_cast<int>(k), -1.0});
      }
      lp.add_row(std::move(terms), inst.supply[j]);
    }

  std::vector<std::pair<int, double>> budget;
  for (std::size_t k = 0; k < layout.pickups.size(); ++k) {
    const auto& p = layout.pickups[k];
    if (p.i == p.j) continue;
    const double c = inst.costs.at(p.t, p.i, p.j);
    if (c > 0.0) budget.push_back({layout.pickup_var(k), c});
  }
  if (!budget.empty()) lp.add_row(std::move(budget), inst.budget);
  return lp;
}

namespace {

enum class Rounding { kFloor, kNearest, kAntiNearest };

double round_value(double v, Rounding mode) {
  const double f = v - std::floor(v);
  if (f < 1e-6) return std::floor(v);
  if (f > 1.0 - 1e-6) return std::ceil(v);
  switch (mode) {
    case Rounding::kFloor:
      return std::floor(v);
    case Rounding::kNearest:
      return std::round(v);
    case Rounding::kAntiNearest:
      return f > 0.5 ? std::floor(v) : std::ceil(v);
  }
  return std::floor(v);
}

/// Rounds an LP point and repairs it slot by slot: pickups are capped by the
/// bikes present and by the budget left after the later slots' planned
/// pickups, then served counts by the bikes picked up. With `augment`, unmet
/// demand is then served greedily from leftover local bikes and, cheapest
/// first, from neighbors.
std::vector<double> round_bike_point(const IlpInstance& inst, const BikeLayout& layout,
                                     const std::vector<double>& x, Rounding mode, bool augment) {
  const int n = inst.regions;
  std::vector<double> out(x.size(), 0.0);
  for (std::size_t k = 0; k < x.size(); ++k) out[k] = round_value(x[k], mode);
  for (std::size_t k = 0; k < layout.served.size(); ++k) {
    const auto& s = layout.served[k];
    out[k] = std::clamp(out[k], 0.0, static_cast<double>(inst.demand.at(s.t, s.i, s.l)));
  }
  auto pickup_cost = [&](std::size_t k) {
    const auto& p = layout.pickups[k];
    return p.i == p.j ? 0.0 : inst.costs.at(p.t, p.i, p.j);
  };
  // planned[t]: cost of the rounded pickups in slots t and later.
  std::vector<double> planned(static_cast<std::size_t>(inst.slots) + 1, 0.0);
  for (std::size_t k = 0; k < layout.pickups.size(); ++k)
    planned[layout.pickups[k].t] += pickup_cost(k) * out[layout.pickup_var(k)];
  for (int t = inst.slots - 1; t >= 0; --t) planned[t] += planned[t + 1];
  double spent = 0.0;

  std::vector<double> avail(inst.supply.begin(), inst.supply.end());
  std::size_t sv = 0, pk = 0;
  for (int t = 0; t < inst.slots; ++t) {
    std::vector<double> arrive(static_cast<std::size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) {
      const std::size_t s0 = sv, p0 = pk;
      while (sv < layout.served.size() && layout.served[sv].t == t && layout.served[sv].i == i)
        ++sv;
      while (pk < layout.pickups.size() && layout.pickups[pk].t == t && layout.pickups[pk].i == i)
        ++pk;
      if (p0 == pk) continue;
      // Local pickup first, then neighbors by cost.
      std::vector<std::size_t> order;
      for (std::size_t k = p0; k < pk; ++k) order.push_back(k);
      std::stable_sort(order.begin() + 1, order.end(), [&](std::size_t a, std::size_t b) {
        return pickup_cost(a) < pickup_cost(b);
      });
      auto allowance = [&] { return inst.budget - planned[t + 1] - spent - 1e-9; };
      double have = 0.0;
      for (std::size_t k : order) {
        double& z = out[layout.pickup_var(k)];
        const double c = pickup_cost(k);
        z = std::max(0.0, std::min(z, avail[layout.pickups[k].j]));
        if (c > 0.0) z = std::min(z, std::max(0.0, std::floor(allowance() / c)));
        avail[layout.pickups[k].j] -= z;
        spent += c * z;
        have += z;
      }
      double need = 0.0;
      for (std::size_t k = s0; k < sv; ++k) need += out[k];
      for (std::size_t k = sv; k > s0 && need > have; --k) {
        const double cut = std::min(out[k - 1], need - have);
        out[k - 1] -= cut;
        need -= cut;
      }
      for (auto it = order.rbegin(); it != order.rend() && have > need; ++it) {
        double& z = out[layout.pickup_var(*it)];
        const double cut = std::min(z, have - need);
        z -= cut;
        have -= cut;
        spent -= cut * pickup_cost(*it);
        avail[layout.pickups[*it].j] += cut;
      }
      if (augment) {
        std::size_t dest = s0;
        for (std::size_t k : order) {
          const double c = pickup_cost(k);
          const int j = layout.pickups[k].j;
          while (dest < sv && avail[j] >= 1.0 && allowance() >= c) {
            const auto& s = layout.served[dest];
            if (out[dest] >= inst.demand.at(s.t, s.i, s.l)) {
              ++dest;
              continue;
            }
            out[dest] += 1.0;
            out[layout.pickup_var(k)] += 1.0;
            avail[j] -= 1.0;
            spent += c;
          }
        }
      }
      for (std::size_t k = s0; k < sv; ++k) arrive[layout.served[k].l] += out[k];
    }
    for (int j = 0; j < n; ++j) avail[j] += arrive[j];
  }
  return out;
}

double served_count(const BikeLayout& layout, const std::vector<double>& x) {
  double v = 0.0;
  for (std::size_t k = 0; k < layout.served.size(); ++k) v += x[k];
  return v;
}

}  // namespace

BikeIlpSolution solve_bike_ilp(const IlpInstance& inst, const BranchAndBoundOptions& options) {
  const LinearProgram lp = build_bike_program(inst);
  const BikeLayout layout(inst);
  BikeIlpSolution sol;
  sol.variables = lp.num_vars;
  sol.constraints = static_cast<int>(lp.rows.size());
  sol.end_supply = inst.supply;
  if (lp.num_vars == 0) {
    sol.exact = true;
    return sol;
  }
  BranchAndBoundOptions opt = options;
  if (!opt.rounding)
    opt.rounding = [&](const std::vector<double>& x) {
      std::vector<double> best;
      double best_served = -1.0;
      for (Rounding mode : {Rounding::kAntiNearest, Rounding::kNearest, Rounding::kFloor})
        for (bool augment : {false, true}) {
          auto cand = round_bike_point(inst, layout, x, mode, augment);
          const double v = served_count(layout, cand);
          if (v > best_served) {
            best_served = v;
            best = std::move(cand);
          }
        }
      return best;
    };
  const IlpResult res = solve_ilp(lp, opt);
  sol.nodes = res.nodes;
  sol.upper_bound = res.upper_bound;
  // All-zero is always feasible, so an empty incumbent only comes from the cap.
  sol.exact = res.exact && res.feasible;
  if (!res.feasible) return sol;
  sol.objective = res.objective;

  const int n = inst.regions;
  for (int t = 0; t < inst.slots; ++t)
    for (int i = 0; i < n; ++i) {
      // Served per destination and bikes per pickup region for this origin.
      std::vector<std::pair<int, int>> dest, pick;
      int need = 0;
      for (std::size_t k = 0; k < layout.served.size(); ++k) {
        const auto& s = layout.served[k];
        if (s.t != t || s.i != i) continue;
        const int v = static_cast<int>(std::lround(res.x[k]));
        if (v > 0) dest.push_back({s.l, v});
        need += v;
      }
      for (std::size_t k = 0; k < layout.pickups.size(); ++k) {
        const auto& p = layout.pickups[k];
        if (p.t != t || p.i != i) continue;
        const int v = static_cast<int>(std::lround(res.x[layout.pickup_var(k)]));
        if (v > 0) pick.push_back({p.j, v});
      }
      // Surplus pickups carry no one; drop them, most expensive first.
      std::stable_sort(pick.begin(), pick.end(), [&](const auto& a, const auto& b) {
        const double ca = a.first == i ? 0.0 : inst.costs.at(t, i, a.first);
        const double cb = b.first == i ? 0.0 : inst.costs.at(t, i, b.first);
        return ca < cb;
      });
      int have = 0;
      for (auto& [j, v] : pick) {
        v = std::min(v, need - have);
        have += v;
      }
      std::size_t a = 0, b = 0;
      while (a < dest.size() && b < pick.size()) {
        const int m = std::min(dest[a].second, pick[b].second);
        if (m > 0) {
          sol.assignments.push_back({t, i, pick[b].first, dest[a].first, m});
          dest[a].second -= m;
          pick[b].second -= m;
        }
        if (dest[a].second == 0) ++a;
        if (b < pick.size() && pick[b].second == 0) ++b;
      }
    }

  for (const auto& as : sol.assignments) {
    sol.end_supply[as.pickup] -= as.count;
    sol.end_supply[as.destination] += as.count;
    if (as.pickup != as.origin) sol.spent += as.count * inst.costs.at(as.slot, as.origin, as.pickup);
  }
  if (sol.spent > inst.budget + 1e-6)
    throw std::logic_error("solve_bike_ilp: assignment exceeds the budget");
  return sol;
}

HorizonResult v_horizon_optimize(const IlpInstance& inst, int v,
                                 const BranchAndBoundOptions& options) {
  if (v < 1) throw std::invalid_argument("v_horizon_optimize: V must be >= 1");
  inst.validate();
  HorizonResult out;
  std::vector<int> supply = inst.supply;
  double remaining = inst.budget;
  for (int first = 0; first < inst.slots; first += v) {
    const int count = std::min(v, inst.slots - first);
    const IlpInstance w = inst.window(first, count, supply, std::max(0.0, remaining));
    const BikeIlpSolution sol = solve_bike_ilp(w, options);
    out.served += sol.objective;
    out.spent += sol.spent;
    out.exact = out.exact && sol.exact;
    out.window_served.push_back(sol.objective);
    supply = sol.end_supply;
    remaining -= sol.spent;
  }
  out.end_supply = supply;
  return out;
}

// ------------------------------------------------------------------ costs

CostSamples::CostSamples(int slots_, int regions_) : slots(slots_), regions(regions_) {
  per_slot.resize(static_cast<std::size_t>(slots) * regions * regions);
  pooled.resize(static_cast<std::size_t>(regions) * regions);
}

std::vector<double>& CostSamples::at(int t, int i, int j) {
  return per_slot[(static_cast<std::size_t>(t) * regions + i) * regions + j];
}

std::vector<double>& CostSamples::pool(int i, int j) {
  return pooled[static_cast<std::size_t>(i) * regions + j];
}

CostSamples monte_carlo_cost_samples(const RegionGrid& grid,
                                     const std::vector<std::vector<LocalPoint>>& bike_pool,
                                     double alpha, int count, int slots, std::uint64_t seed) {
  if (count < 1) throw std::invalid_argument("monte_carlo_cost_samples: count must be >= 1");
  const int n = grid.size();
  CostSamples out(slots, n);
  Rng rng(seed);
  for (int i = 0; i < n; ++i)
    for (int j : grid.neighbors(i)) {
      auto& dst = out.pool(i, j);
      dst.reserve(static_cast<std::size_t>(count));
      const bool have_pool = j < static_cast<int>(bike_pool.size()) && !bike_pool[j].empty();
      for (int k = 0; k < count; ++k) {
        const LocalPoint user = grid.sample_point(i, rng);
        LocalPoint bike;
        if (have_pool) {
          std::uniform_int_distribution<std::size_t> pick(0, bike_pool[j].size() - 1);
          bike = bike_pool[j][pick(rng)];
        } else {
          bike = grid.sample_point(j, rng);
        }
        dst.push_back(walking_cost(distance_m(user, bike), alpha));
      }
    }
  return out;
}

PairCostTable sample_costs(const CostSamples& samples,
                           const std::vector<std::vector<int>>& neighbors, std::uint64_t seed) {
  const int n = samples.regions;
  PairCostTable table;
  table.slots = samples.slots;
  table.regions = n;
  table.cost.assign(static_cast<std::size_t>(samples.slots) * n * n, 0.0);
  Rng rng(seed);
  for (int t = 0; t < samples.slots; ++t)
    for (int i = 0; i < n; ++i)
      for (int j : neighbors[i]) {
        const auto& slot = samples.per_slot[(static_cast<std::size_t>(t) * n + i) * n + j];
        const auto& pool = samples.pooled[static_cast<std::size_t>(i) * n + j];
        const auto& src = slot.empty() ? pool : slot;
        if (src.empty())
          throw std::invalid_argument("sample_costs: no samples for region pair " +
                                      std::to_string(i) + "->" + std::to_string(j));
        std::uniform_int_distribution<std::size_t> pick(0, src.size() - 1);
        table.at(t, i, j) = src[pick(rng)];
      }
  return table;
}

// ------------------------------------------------------------------- JSON

void write_instance_json(const IlpInstance& inst, std::ostream& out) {
  nlohmann::json j;
  j["slots"] = inst.slots;
  j["regions"] = inst.regions;
  j["neighbors"] = inst.neighbors;
  j["supply"] = inst.supply;
  j["budget"] = inst.budget;
  j["demand"] = inst.demand.raw();
  j["costs"] = inst.costs.cost;
  out << j.dump(1) << '\n';
}

IlpInstance read_instance_json(std::istream& in) {
  const nlohmann::json j = nlohmann::json::parse(in);
  IlpInstance inst;
  inst.slots = j.at("slots").get<int>();
  inst.regions = j.at("regions").get<int>();
  inst.neighbors = j.at("neighbors").get<std::vector<std::vector<int>>>();
  inst.supply = j.at("supply").get<std::vector<int>>();
  inst.budget = j.at("budget").get<double>();
  const auto demand = j.at("demand").get<std::vector<int>>();
  inst.demand = DemandTensor(inst.slots, inst.regions);
  if (demand.size() != inst.demand.raw().size())
    throw std::invalid_argument("read_instance_json: demand has the wrong length");
  std::size_t k = 0;
  for (int t = 0; t < inst.slots; ++t)
    for (int a = 0; a < inst.regions; ++a)
      for (int b = 0; b < inst.regions; ++b) inst.demand.at(t, a, b) = demand[k++];
  inst.costs.slots = inst.slots;
  inst.costs.regions = inst.regions;
  inst.costs.cost = j.at("costs").get<std::vector<double>>();
  inst.validate();
  return inst;
}

}  // namespace rebal
