#include "rebal/metrics.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace rebal {

double dur(std::int64_t un_baseline, std::int64_t un_alg) {
  if (un_baseline <= 0)
    throw std::invalid_argument("dur: the baseline has no unserved requests");
  return static_cast<double>(un_baseline - un_alg) / static_cast<double>(un_baseline) * 100.0;
}

namespace {

std::vector<double> smoothed(const std::vector<double>& counts) {
  double total = 0.0;
  for (double c : counts) {
    if (!(c >= 0.0)) throw std::invalid_argument("kl_divergence: negative count");
    total += c;
  }
  if (!(total > 0.0)) throw std::invalid_argument("kl_divergence: empty distribution");
  std::vector<double> p(counts.size());
  double norm = 0.0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    p[i] = counts[i] > 0.0 ? counts[i] / total : kKlSmoothing;
    norm += p[i];
  }
  for (double& v : p) v /= norm;
  return p;
}

std::vector<double> as_counts(const Census& c) {
  return std::vector<double>(c.supply.begin(), c.supply.end());
}

}  // namespace

double kl_divergence(const std::vector<double>& p_counts, const std::vector<double>& q_counts) {
  if (p_counts.size() != q_counts.size() || p_counts.empty())
    throw std::invalid_argument("kl_divergence: dimension mismatch");
  const auto p = smoothed(p_counts);
  const auto q = smoothed(q_counts);
  double d = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) d += p[i] * std::log(p[i] / q[i]);
  return std::max(0.0, d);
}

double kl_divergence(const Census& begin, const Census& end) {
  return kl_divergence(as_counts(begin), as_counts(end));
}

double episode_kl(const EpisodeLog& log) {
  return kl_divergence(log.initial_census, log.final_census());
}

std::int64_t unservice_count(const EpisodeLog& log) {
  std::int64_t un = 0;
  for (const auto& s : log.slots)
    un += std::accumulate(s.unsatisfied.begin(), s.unsatisfied.end(), std::int64_t{0});
  return un;
}

BaselineRun baseline_run(const SimConfig& config, std::uint64_t seed) {
  Simulator sim(config);
  sim.reset(seed);
  const PriceAction zero(sim.regions(), 0.0);
  BaselineRun out;
  out.no_local_bike.assign(static_cast<std::size_t>(sim.regions()), 0);
  while (!sim.done()) {
    const auto step = sim.step(zero);
    out.served += step.reward;
    for (int i = 0; i < sim.regions(); ++i) out.no_local_bike[i] += step.no_local_bike[i];
  }
  out.log = sim.log();
  out.unservice = unservice_count(out.log);
  try {
    out.kl = episode_kl(out.log);
  } catch (const std::invalid_argument&) {
    out.kl = 0.0;  // no parked bikes at one end
  }
  return out;
}

}  // namespace rebal
