#pragma once

// Offline-optimal incentive assignment: a dense bounded-variable simplex, a
// best-bound branch-and-bound on top of it, and the bike-sharing ILP with its
// V-slot rolling horizon.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "rebal/core.hpp"
#include "rebal/sim.hpp"

namespace rebal {

constexpr double kInf = std::numeric_limits<double>::infinity();

/// maximize c^T x  subject to  rows: sum a_ij x_j <= rhs_i,  lower <= x <= upper.
struct LinearProgram {
  struct Row {
    std::vector<std::pair<int, double>> terms;
    double rhs = 0.0;
  };

  int num_vars = 0;
  std::vector<double> objective;
  std::vector<double> lower;
  std::vector<double> upper;
  std::vector<Row> rows;

  explicit LinearProgram(int vars = 0);
  int add_row(std::vector<std::pair<int, double>> terms, double rhs);
  double evaluate(const std::vector<double>& x) const;
  /// Bounds and rows within `tol`.
  bool feasible(const std::vector<double>& x, double tol = 1e-6) const;
};

enum class LpStatus { kOptimal, kInfeasible, kUnbounded, kIterationLimit };

struct LpResult {
  LpStatus status = LpStatus::kInfeasible;
  double objective = 0.0;
  std::vector<double> x;
  std::int64_t iterations = 0;
};

struct SimplexOptions {
  double tolerance = 1e-9;
  std::int64_t max_iterations = 1000000;
};

/// Two-phase primal simplex on a dense tableau with bounded variables.
/// Dantzig pricing, switching to Bland's rule after 10 (m + n) iterations.
LpResult solve_lp(const LinearProgram& lp, const SimplexOptions& options = {});

struct BranchAndBoundOptions {
  std::int64_t node_cap = 100000;
  double integrality_tolerance = 1e-6;
  SimplexOptions simplex;
  /// Optional primal heuristic: maps a node's LP solution to a candidate
  /// integral point. Candidates are checked before they become incumbents.
  std::function<std::vector<double>(const std::vector<double>&)> rounding;
};

struct IlpResult {
  bool feasible = false;
  /// False when the node cap stopped the search before the tree was closed.
  bool exact = false;
  double objective = 0.0;    // best integral incumbent
  double upper_bound = 0.0;  // root LP bound, or the proven optimum when exact
  double lp_relaxation = 0.0;
  std::vector<double> x;
  std::int64_t nodes = 0;
};

/// Best-bound branch-and-bound, branching on the most fractional variable.
/// Every variable is integral.
IlpResult solve_ilp(const LinearProgram& lp, const BranchAndBoundOptions& options = {});

// ------------------------------------------------------------------ bike ILP

/// Offline assignment problem over `slots` consecutive slots with trips
/// completing in the slot they start.
struct IlpInstance {
  int slots = 0;
  int regions = 0;
  std::vector<std::vector<int>> neighbors;  // N(i), excluding i
  DemandTensor demand;                      // d_il(t)
  std::vector<int> supply;                  // S_j at the first slot
  PairCostTable costs;                      // c_ij(t), c_ii = 0
  double budget = 0.0;

  static IlpInstance from_grid(const RegionGrid& grid, DemandTensor demand,
                               std::vector<int> supply, PairCostTable costs, double budget);
  void validate() const;
  /// Slots [first, first + count) with a new starting supply and budget.
  IlpInstance window(int first, int count, std::vector<int> start_supply,
                     double start_budget) const;
};

/// x_ijl(t): users from i served by a bike in j riding to l in slot t.
struct Assignment {
  int slot = 0;
  int origin = 0;
  int pickup = 0;
  int destination = 0;
  int count = 0;
};

struct BikeIlpSolution {
  bool exact = false;
  double objective = 0.0;    // served requests
  double upper_bound = 0.0;
  double spent = 0.0;
  std::vector<Assignment> assignments;
  std::vector<int> end_supply;
  std::int64_t nodes = 0;
  int variables = 0;
  int constraints = 0;
};

/// Builds the aggregated program: served counts y_il(t) <= d_il(t) and
/// pickups z_ij(t) with j in {i} and N(i), linked by sum_l y_il <= sum_j z_ij,
/// supply rows with S_j(t) written out through the slot dynamics, and one
/// budget row. Its optimum equals the optimum over x_ijl(t).
LinearProgram build_bike_program(const IlpInstance& inst);

BikeIlpSolution solve_bike_ilp(const IlpInstance& inst, const BranchAndBoundOptions& options = {});

struct HorizonResult {
  double served = 0.0;
  double spent = 0.0;
  bool exact = true;
  std::vector<double> window_served;
  std::vector<int> end_supply;
};

/// Solves consecutive windows of V slots, committing each window's
/// assignment and carrying supply and remaining budget forward. The last
/// window is truncated when V does not divide the horizon.
HorizonResult v_horizon_optimize(const IlpInstance& inst, int v,
                                 const BranchAndBoundOptions& options = {});

// ------------------------------------------------------------------- costs

/// Empirical cost samples per (slot, i, j), with a per-(i, j) pool used when a
/// slot has none.
struct CostSamples {
  int slots = 0;
  int regions = 0;
  std::vector<std::vector<double>> per_slot;  // [(t * n + i) * n + j]
  std::vector<std::vector<double>> pooled;    // [i * n + j]

  CostSamples() = default;
  CostSamples(int slots, int regions);
  std::vector<double>& at(int t, int i, int j);
  std::vector<double>& pool(int i, int j);
};

/// alpha x^2 for users uniform in i walking to bikes drawn from j's pool,
/// `count` samples per neighboring pair, pooled over slots.
CostSamples monte_carlo_cost_samples(const RegionGrid& grid,
                                     const std::vector<std::vector<LocalPoint>>& bike_pool,
                                     double alpha, int count, int slots, std::uint64_t seed);

/// One draw per (t, i, j) for j in N(i); c_ii(t) = 0 and non-neighbor pairs
/// are left at 0 (never used). Throws std::invalid_argument when a needed
/// pair has no samples at all.
PairCostTable sample_costs(const CostSamples& samples,
                           const std::vector<std::vector<int>>& neighbors, std::uint64_t seed);

void write_instance_json(const IlpInstance& inst, std::ostream& out);
IlpInstance read_instance_json(std::istream& in);

}  // namespace rebal
