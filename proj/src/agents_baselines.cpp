#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "rebal/agents.hpp"

namespace rebal {

RandomPricer::RandomPricer(int regions, double p_max, std::uint64_t seed)
    : regions_(regions), p_max_(p_max), rng_(seed) {}

PriceAction RandomPricer::act(const Observation& obs) {
  PriceAction a(regions_, 0.0);
  if (obs.remaining_budget <= 0.0) return a;
  std::uniform_real_distribution<double> u(0.0, p_max_);
  for (double& p : a.price) p = u(rng_);
  return a;
}

// ---------------------------------------------------------------- OPT-FIX

namespace {

double quantile_sorted(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace

double OptFixPricer::best_price(std::vector<double> costs, double allowance_per_offer) {
  if (costs.empty()) throw std::invalid_argument("OPT-FIX: empty cost sample");
  std::sort(costs.begin(), costs.end());
  const double n = static_cast<double>(costs.size());
  double best_price = 0.0;
  double best_acceptance = 0.0;
  for (int k = 0; k < kQuantiles; ++k) {
    const double p = quantile_sorted(costs, static_cast<double>(k) / (kQuantiles - 1));
    if (p <= 0.0) continue;
    const auto accepted = std::upper_bound(costs.begin(), costs.end(), p) - costs.begin();
    const double acceptance = static_cast<double>(accepted) / n;
    if (p * acceptance > allowance_per_offer + 1e-12) continue;
    if (acceptance > best_acceptance || (acceptance == best_acceptance && p < best_price)) {
      best_acceptance = acceptance;
      best_price = p;
    }
  }
  return best_acceptance > 0.0 ? best_price : 0.0;
}

PriceAction OptFixPricer::calibrate(const std::vector<std::vector<double>>& cost_samples,
                                    double budget, const std::vector<double>& demand,
                                    const std::vector<double>& expected_offers) {
  const std::size_t n = cost_samples.size();
  if (demand.size() != n || expected_offers.size() != n)
    throw std::invalid_argument("OPT-FIX: region count mismatch");
  if (std::all_of(cost_samples.begin(), cost_samples.end(),
                  [](const auto& v) { return v.empty(); }))
    throw std::invalid_argument("OPT-FIX: empty cost samples");
  PriceAction action(static_cast<int>(n), 0.0);
  const double total_demand = std::accumulate(demand.begin(), demand.end(), 0.0);
  if (budget <= 0.0 || total_demand <= 0.0) return action;
  for (std::size_t i = 0; i < n; ++i) {
    if (cost_samples[i].empty()) continue;
    const double share = budget * demand[i] / total_demand;
    const double allowance = share / std::max(1.0, expected_offers[i]);
    action.price[i] = best_price(cost_samples[i], allowance);
  }
  return action;
}

// ---------------------------------------------------------------- DBP-UCB

UcbPriceArms::UcbPriceArms(int arms, double p_max)
    : prices_(static_cast<std::size_t>(arms)),
      counts_(static_cast<std::size_t>(arms), 0),
      sums_(static_cast<std::size_t>(arms), 0.0) {
  if (arms < 2) throw std::invalid_argument("UcbPriceArms: need at least two arms");
  for (int k = 0; k < arms; ++k) prices_[k] = p_max * k / (arms - 1);
}

double UcbPriceArms::mean(int arm) const {
  return counts_[arm] > 0 ? sums_[arm] / static_cast<double>(counts_[arm]) : 0.0;
}

double UcbPriceArms::arm_value(int arm, double pace) const {
  if (prices_[arm] <= 0.0) return 1.0;
  return std::min(1.0, std::max(0.0, pace) / prices_[arm]);
}

double UcbPriceArms::index(int arm, double pace) const {
  if (counts_[arm] == 0) return std::numeric_limits<double>::infinity();
  const double t = static_cast<double>(std::max<std::int64_t>(total_, 1));
  const double ucb = mean(arm) + std::sqrt(2.0 * std::log(t) / static_cast<double>(counts_[arm]));
  return std::clamp(ucb, 0.0, 1.0) * arm_value(arm, pace);
}

int UcbPriceArms::select(double remaining_budget, double pace) const {
  int best = 0;
  double best_index = -1.0;
  for (int k = 0; k < arms(); ++k) {
    if (prices_[k] > remaining_budget) continue;
    const double idx = index(k, pace);
    if (idx > best_index) {
      best_index = idx;
      best = k;
    }
  }
  return best;
}

void UcbPriceArms::update(int arm, double reward) {
  ++counts_[arm];
  sums_[arm] += reward;
  ++total_;
}

DbpUcbPricer::DbpUcbPricer(int regions, int slots_per_episode, double p_max, int arms)
    : arms_(static_cast<std::size_t>(regions), UcbPriceArms(arms, p_max)),
      pulled_(static_cast<std::size_t>(regions), 0),
      offers_per_slot_(static_cast<std::size_t>(slots_per_episode), 0.0),
      offers_this_episode_(static_cast<std::size_t>(slots_per_episode), 0.0),
      slots_(slots_per_episode) {}

void DbpUcbPricer::begin_episode(int, bool) {
  step_ = 0;
  std::fill(offers_this_episode_.begin(), offers_this_episode_.end(), 0.0);
}

double DbpUcbPricer::pace(double remaining_budget) const {
  double expected = 0.0;
  for (int t = step_; t < slots_; ++t) expected += offers_per_slot_[t];
  return remaining_budget / std::max(1.0, expected);
}

PriceAction DbpUcbPricer::act(const Observation& obs) {
  const int n = static_cast<int>(arms_.size());
  PriceAction a(n, 0.0);
  const double rb = obs.remaining_budget;
  const double p = pace(rb);
  for (int i = 0; i < n; ++i) {
    pulled_[i] = arms_[i].select(rb, p);
    a.price[i] = arms_[i].price(pulled_[i]);
  }
  return a;
}

void DbpUcbPricer::observe(const Observation&, const PriceAction&, const StepOutcome& outcome) {
  const int n = static_cast<int>(arms_.size());
  double needing = 0.0;
  for (int i = 0; i < n; ++i) {
    const int eligible = outcome.no_local_bike[i];
    needing += eligible;
    if (eligible > 0)
      arms_[i].update(pulled_[i], static_cast<double>(outcome.accepted[i]) / eligible);
  }
  if (step_ < slots_) offers_this_episode_[step_] = needing;
  ++step_;
  if (outcome.episode_done) {
    ++episodes_seen_;
    const double w = 1.0 / episodes_seen_;
    for (int t = 0; t < slots_; ++t)
      offers_per_slot_[t] += w * (offers_this_episode_[t] - offers_per_slot_[t]);
  }
}

}  // namespace rebal
