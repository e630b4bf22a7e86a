#pragma once

// Evaluation metrics: un-service counts against the zero-incentive baseline,
// decreased un-service ratio and KL divergence between bike distributions.

#include <cstdint>
#include <vector>

#include "rebal/sim.hpp"

namespace rebal {

/// Additive smoothing applied to empty cells before taking logarithms.
constexpr double kKlSmoothing = 1e-9;

/// Decreased un-service ratio in percent: (UN_base - UN_alg) / UN_base * 100.
/// Negative when the algorithm leaves more requests unserved.
/// Throws std::invalid_argument when un_baseline <= 0.
double dur(std::int64_t un_baseline, std::int64_t un_alg);

/// D(p || q) in nats. Both count vectors are normalized; empty cells on
/// either side receive kKlSmoothing before renormalization.
/// Throws std::invalid_argument on a size mismatch or a non-positive total.
double kl_divergence(const std::vector<double>& p_counts, const std::vector<double>& q_counts);
/// Parked bikes per region; bikes in transit are not part of either side.
double kl_divergence(const Census& begin, const Census& end);
/// Divergence of the episode's final distribution from its initial one.
double episode_kl(const EpisodeLog& log);

std::int64_t unservice_count(const EpisodeLog& log);

struct BaselineRun {
  std::int64_t unservice = 0;
  std::int64_t served = 0;
  double kl = 0.0;
  std::vector<std::int64_t> no_local_bike;  // per region
  EpisodeLog log;
};

/// The same simulator driven by the all-zero price action.
BaselineRun baseline_run(const SimConfig& config, std::uint64_t seed);

}  // namespace rebal
