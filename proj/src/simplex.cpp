#include <algorithm>
#include <cmath>
#include <optional>
#include <queue>
#include <stdexcept>

#include <Eigen/Dense>

#include "rebal/offlineopt.hpp"

namespace rebal {

LinearProgram::LinearProgram(int vars)
    : num_vars(vars),
      objective(static_cast<std::size_t>(vars), 0.0),
      lower(static_cast<std::size_t>(vars), 0.0),
      upper(static_cast<std::size_t>(vars), kInf) {}

int LinearProgram::add_row(std::vector<std::pair<int, double>> terms, double rhs) {
  rows.push_back({std::move(terms), rhs});
  return static_cast<int>(rows.size()) - 1;
}

double LinearProgram::evaluate(const std::vector<double>& x) const {
  double v = 0.0;
  for (int j = 0; j < num_vars; ++j) v += objective[j] * x[j];
  return v;
}

bool LinearProgram::feasible(const std::vector<double>& x, double tol) const {
  if (static_cast<int>(x.size()) != num_vars) return false;
  for (int j = 0; j < num_vars; ++j)
    if (x[j] < lower[j] - tol || x[j] > upper[j] + tol) return false;
  for (const auto& row : rows) {
    double lhs = 0.0;
    for (const auto& [j, a] : row.terms) lhs += a * x[j];
    if (lhs > row.rhs + tol) return false;
  }
  return true;
}

namespace {

using Tableau = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class Simplex {
 public:
  Simplex(const LinearProgram& lp, const SimplexOptions& opt) : lp_(lp), opt_(opt) {}

  LpResult solve() {
    LpResult res;
    const int n = lp_.num_vars;
    const int m = static_cast<int>(lp_.rows.size());
    for (int j = 0; j < n; ++j) {
      if (!std::isfinite(lp_.lower[j]) || lp_.lower[j] > lp_.upper[j] + opt_.tolerance)
        return res;  // infeasible bounds
    }

    // Shift x = lower + x' so every structural variable lives in [0, ub].
    std::vector<double> rhs(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
      double b = lp_.rows[i].rhs;
      for (const auto& [j, a] : lp_.rows[i].terms) b -= a * lp_.lower[j];
      rhs[i] = b;
    }
    std::vector<int> negated;
    for (int i = 0; i < m; ++i)
      if (rhs[i] < 0.0) negated.push_back(i);
    const int k = static_cast<int>(negated.size());
    n_ = n;
    m_ = m;
    cols_ = n + m + k;

    t_ = Tableau::Zero(m, cols_);
    ub_.assign(static_cast<std::size_t>(cols_), kInf);
    for (int j = 0; j < n; ++j) ub_[j] = lp_.upper[j] - lp_.lower[j];
    at_upper_.assign(static_cast<std::size_t>(cols_), 0);
    basis_.assign(static_cast<std::size_t>(m), -1);
    beta_.resize(m);
    int art = 0;
    for (int i = 0; i < m; ++i) {
      const bool neg = rhs[i] < 0.0;
      const double sign = neg ? -1.0 : 1.0;
      for (const auto& [j, a] : lp_.rows[i].terms) t_(i, j) += sign * a;
      t_(i, n + i) = sign;
      beta_(i) = sign * rhs[i];
      if (neg) {
        const int col = n + m + art++;
        t_(i, col) = 1.0;
        basis_[i] = col;
      } else {
        basis_[i] = n + i;
      }
    }

    if (k > 0) {
      Eigen::VectorXd c1 = Eigen::VectorXd::Zero(cols_);
      for (int a = 0; a < k; ++a) c1(n + m + a) = -1.0;
      const LpStatus s = run(c1, res.iterations);
      if (s == LpStatus::kIterationLimit) {
        res.status = s;
        return res;
      }
      double infeas = 0.0;
      for (int i = 0; i < m; ++i)
        if (basis_[i] >= n + m) infeas += beta_(i);
      if (infeas > 1e-7 * std::max(1.0, static_cast<double>(m))) return res;
      for (int a = 0; a < k; ++a) ub_[n + m + a] = 0.0;
    }

    Eigen::VectorXd c = Eigen::VectorXd::Zero(cols_);
    for (int j = 0; j < n; ++j) c(j) = lp_.objective[j];
    res.status = run(c, res.iterations);
    if (res.status != LpStatus::kOptimal) return res;

    std::vector<double> value(static_cast<std::size_t>(cols_), 0.0);
    for (int j = 0; j < cols_; ++j)
      if (at_upper_[j]) value[j] = ub_[j];
    for (int i = 0; i < m; ++i) value[basis_[i]] = beta_(i);
    res.x.resize(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j)
      res.x[j] = std::clamp(lp_.lower[j] + value[j], lp_.lower[j], lp_.upper[j]);
    res.objective = lp_.evaluate(res.x);
    return res;
  }

 private:
  LpStatus run(const Eigen::VectorXd& c, std::int64_t& iterations) {
    const double tol = opt_.tolerance;
    std::vector<char> is_basic(static_cast<std::size_t>(cols_), 0);
    for (int b : basis_) is_basic[b] = 1;
    Eigen::VectorXd cb(m_);
    for (int i = 0; i < m_; ++i) cb(i) = c(basis_[i]);
    Eigen::RowVectorXd d = c.transpose() - cb.transpose() * t_;
    const std::int64_t bland_after = 10LL * (m_ + n_);
    std::int64_t local = 0;

    while (true) {
      if (iterations >= opt_.max_iterations) return LpStatus::kIterationLimit;
      const bool bland = local >= bland_after;
      int enter = -1;
      double best = 0.0;
      for (int j = 0; j < cols_; ++j) {
        if (is_basic[j]) continue;
        const double dj = d(j);
        const bool up = !at_upper_[j] && dj > tol && ub_[j] > 0.0;
        const bool down = at_upper_[j] && dj < -tol;
        if (!up && !down) continue;
        if (bland) {
          enter = j;
          break;
        }
        if (std::abs(dj) > best) {
          best = std::abs(dj);
          enter = j;
        }
      }
      if (enter < 0) return LpStatus::kOptimal;
      ++iterations;
      ++local;

      const double delta = at_upper_[enter] ? -1.0 : 1.0;
      const Eigen::VectorXd col = t_.col(enter);
      double theta = ub_[enter];
      int leave = -1;
      bool leave_to_upper = false;
      double leave_pivot = 0.0;
      for (int i = 0; i < m_; ++i) {
        const double a = delta * col(i);
        double lim;
        bool to_upper;
        if (a > tol) {
          lim = std::max(0.0, beta_(i)) / a;
          to_upper = false;
        } else if (a < -tol && std::isfinite(ub_[basis_[i]])) {
          lim = std::max(0.0, ub_[basis_[i]] - beta_(i)) / -a;
          to_upper = true;
        } else {
          continue;
        }
        bool take = lim < theta - tol;
        if (!take && lim <= theta + tol && leave >= 0) {
          take = bland ? basis_[i] < basis_[leave] : std::abs(a) > leave_pivot;
        }
        if (take) {
          theta = lim;
          leave = i;
          leave_to_upper = to_upper;
          leave_pivot = std::abs(a);
        }
      }
      if (!std::isfinite(theta)) return LpStatus::kUnbounded;

      beta_.noalias() -= (delta * theta) * col;
      if (leave < 0) {
        at_upper_[enter] = !at_upper_[enter];
        continue;
      }
      const double entering_value = (at_upper_[enter] ? ub_[enter] : 0.0) + delta * theta;
      const int out = basis_[leave];
      at_upper_[out] = leave_to_upper ? 1 : 0;
      is_basic[out] = 0;
      basis_[leave] = enter;
      is_basic[enter] = 1;
      at_upper_[enter] = 0;

      const double piv = col(leave);
      t_.row(leave) /= piv;
      const Eigen::RowVectorXd prow = t_.row(leave);
      Eigen::VectorXd factors = col;
      factors(leave) = 0.0;
      t_.noalias() -= factors * prow;
      d.noalias() -= d(enter) * prow;
      d(enter) = 0.0;
      beta_(leave) = entering_value;
    }
  }

  const LinearProgram& lp_;
  SimplexOptions opt_;
  int n_ = 0, m_ = 0, cols_ = 0;
  Tableau t_;
  Eigen::VectorXd beta_;
  std::vector<double> ub_;
  std::vector<char> at_upper_;
  std::vector<int> basis_;
};

}  // namespace

LpResult solve_lp(const LinearProgram& lp, const SimplexOptions& options) {
  if (static_cast<int>(lp.objective.size()) != lp.num_vars ||
      static_cast<int>(lp.lower.size()) != lp.num_vars ||
      static_cast<int>(lp.upper.size()) != lp.num_vars)
    throw std::invalid_argument("solve_lp: inconsistent variable arrays");
  for (const auto& row : lp.rows)
    for (const auto& [j, a] : row.terms)
      if (j < 0 || j >= lp.num_vars || !std::isfinite(a))
        throw std::invalid_argument("solve_lp: bad row term");
  return Simplex(lp, options).solve();
}

// ---------------------------------------------------------- branch & bound

namespace {

struct Node {
  double bound;
  std::int64_t order;
  std::vector<double> lower;
  std::vector<double> upper;
};

struct WorseNode {
  bool operator()(const Node& a, const Node& b) const {
    if (a.bound != b.bound) return a.bound < b.bound;
    return a.order > b.order;
  }
};

bool integral_objective(const LinearProgram& lp) {
  for (double c : lp.objective)
    if (c != std::round(c)) return false;
  return true;
}

}  // namespace

IlpResult solve_ilp(const LinearProgram& lp, const BranchAndBoundOptions& options) {
  IlpResult out;
  const double itol = options.integrality_tolerance;
  const bool integral_obj = integral_objective(lp);
  LinearProgram work = lp;
  for (int j = 0; j < lp.num_vars; ++j) {
    work.lower[j] = std::ceil(lp.lower[j] - itol);
    if (std::isfinite(lp.upper[j])) work.upper[j] = std::floor(lp.upper[j] + itol);
  }

  auto prunable = [&](double bound) {
    if (!out.feasible) return false;
    if (integral_obj) return std::floor(bound + 1e-7) <= out.objective + 0.5;
    return bound <= out.objective + 1e-9;
  };

  auto offer = [&](std::vector<double> x) {
    if (static_cast<int>(x.size()) != lp.num_vars) return;
    for (double v : x)
      if (v != std::round(v)) return;
    if (!lp.feasible(x, 1e-9)) return;
    const double value = lp.evaluate(x);
    if (!out.feasible || value > out.objective) {
      out.feasible = true;
      out.objective = value;
      out.x = std::move(x);
    }
  };

  std::priority_queue<Node, std::vector<Node>, WorseNode> open;
  std::int64_t order = 0;
  const LpResult root = solve_lp(work, options.simplex);
  ++out.nodes;
  if (root.status != LpStatus::kOptimal) {
    if (root.status == LpStatus::kUnbounded)
      throw std::runtime_error("solve_ilp: LP relaxation is unbounded");
    return out;
  }
  out.lp_relaxation = root.objective;
  out.upper_bound = root.objective;
  open.push({root.objective, order++, work.lower, work.upper});

  bool first = true;
  // Until the first incumbent exists the search plunges depth-first into the
  // rounded-down child; afterwards it is pure best-bound.
  std::optional<Node> plunge;
  while (plunge || !open.empty()) {
    if (out.nodes >= options.node_cap) break;
    Node node;
    if (plunge) {
      node = std::move(*plunge);
      plunge.reset();
    } else {
      node = open.top();
      open.pop();
    }
    if (prunable(node.bound)) continue;

    LpResult res;
    if (first) {
      res = root;
      first = false;
    } else {
      work.lower = node.lower;
      work.upper = node.upper;
      res = solve_lp(work, options.simplex);
      ++out.nodes;
    }
    if (res.status != LpStatus::kOptimal) continue;
    if (prunable(res.objective)) continue;
    if (options.rounding) {
      offer(options.rounding(res.x));
      if (prunable(res.objective)) continue;
    }

    int branch = -1;
    double most = 0.0;
    for (int j = 0; j < lp.num_vars; ++j) {
      const double f = res.x[j] - std::floor(res.x[j]);
      const double dist = std::min(f, 1.0 - f);
      if (dist > itol && dist > most + 1e-12) {
        most = dist;
        branch = j;
      }
    }
    if (branch < 0) {
      std::vector<double> x = res.x;
      for (double& v : x) v = std::round(v);
      offer(std::move(x));
      continue;
    }
    Node down{res.objective, order++, node.lower, node.upper};
    down.upper[branch] = std::floor(res.x[branch]);
    Node up{res.objective, order++, node.lower, node.upper};
    up.lower[branch] = std::ceil(res.x[branch]);
    if (!out.feasible) {
      plunge = std::move(down);
    } else {
      open.push(std::move(down));
    }
    open.push(std::move(up));
  }
  if (plunge) open.push(std::move(*plunge));

  bool closed = true;
  double remaining = -kInf;
  while (!open.empty()) {
    if (!prunable(open.top().bound)) {
      closed = false;
      remaining = std::max(remaining, open.top().bound);
    }
    open.pop();
  }
  if (out.feasible && out.objective > out.lp_relaxation + 1e-6 * (1.0 + std::abs(out.lp_relaxation)))
    throw std::logic_error("solve_ilp: incumbent exceeds the LP relaxation bound");
  if (closed) {
    out.exact = true;
    if (out.feasible) out.upper_bound = out.objective;
  } else {
    out.exact = false;
    out.upper_bound = std::max(remaining, out.feasible ? out.objective : -kInf);
  }
  return out;
}

}  // namespace rebal
