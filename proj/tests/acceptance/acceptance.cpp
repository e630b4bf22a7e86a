// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
//
//   acceptance [--only 1,4,9] [--configs DIR] [--out DIR]
//
// Criteria 5-9 train agents on the configs in configs/acceptance and
// take tens of minutes on one core; everything else finishes in seconds.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "../support/ilp_oracles.hpp"
#include "rebal/agents.hpp"
#include "rebal/experiment.hpp"
#include "rebal/ingest.hpp"
#include "rebal/metrics.hpp"
#include "rebal/nn.hpp"
#include "rebal/offlineopt.hpp"
#include "rebal/sim.hpp"

#ifndef REBAL_CONFIG_DIR
#define REBAL_CONFIG_DIR "configs"
#endif

using namespace rebal;
using nn::Matrix;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string format(const char* fmt, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, fmt, args...);
  return buf;
}

// ------------------------------------------------------- finite differences

constexpr double kStep = 1e-5;
// Gradients smaller than this are compared on an absolute scale.
constexpr double kMagnitudeFloor = 1e-6;

double rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), kMagnitudeFloor});
}

Matrix random_matrix(int rows, int cols, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = u(rng);
  return m;
}

// Largest relative error between `grad` and central differences of f in x.
double fd_worst(Matrix& x, const Matrix& grad, const std::function<double()>& f) {
  double worst = 0.0;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double keep = x(k);
    x(k) = keep + kStep;
    const double up = f();
    x(k) = keep - kStep;
    const double down = f();
    x(k) = keep;
    worst = std::max(worst, rel_error(grad(k), (up - down) / (2 * kStep)));
  }
  return worst;
}

void randomize(const nn::ParamList& params, Rng& rng) {
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (nn::Tensor* p : params)
    for (Eigen::Index k = 0; k < p->value.size(); ++k) p->value(k) = u(rng);
}

int uniform_int(Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

Verdict criterion_gradients() {
  constexpr int kConfigs = 100;
  Rng rng(101);
  const nn::Activation acts[] = {nn::Activation::kIdentity, nn::Activation::kRelu,
                                 nn::Activation::kTanh, nn::Activation::kSigmoid};

  double dense_worst = 0.0;
  for (int c = 0; c < kConfigs; ++c) {
    const int in = uniform_int(rng, 1, 8), out = uniform_int(rng, 1, 8), b = uniform_int(rng, 1, 4);
    nn::Dense layer(in, out, acts[c % 4], rng, "d");
    Matrix x = random_matrix(in, b, rng);
    const Matrix w = random_matrix(out, b, rng);
    auto loss = [&] { return layer.forward(x).cwiseProduct(w).sum(); };
    nn::Dense::Tape tape;
    layer.forward(x, &tape);
    nn::zero_grads(layer.params());
    const Matrix dx = layer.backward(tape, w);
    dense_worst = std::max(dense_worst, fd_worst(x, dx, loss));
    for (nn::Tensor* p : layer.params())
      dense_worst = std::max(dense_worst, fd_worst(p->value, p->grad, loss));
  }

  double gru_worst = 0.0;
  for (int c = 0; c < kConfigs; ++c) {
    const int in = uniform_int(rng, 1, 3), hidden = uniform_int(rng, 1, 6);
    const int steps = uniform_int(rng, 1, 8), b = uniform_int(rng, 1, 3);
    nn::GruCell cell(in, hidden, rng, "g");
    std::vector<Matrix> xs;
    for (int k = 0; k < steps; ++k) xs.push_back(random_matrix(in, b, rng));
    Matrix h0 = random_matrix(hidden, b, rng, -0.5, 0.5);
    const Matrix w = random_matrix(hidden, b, rng);
    auto loss = [&] { return cell.run(xs, h0).cwiseProduct(w).sum(); };
    nn::GruCell::SequenceTape tape;
    cell.run(xs, h0, &tape);
    nn::zero_grads(cell.params());
    const auto grads = cell.backward_sequence(tape, w);
    for (int k = 0; k < steps; ++k) gru_worst = std::max(gru_worst, fd_worst(xs[k], grads[k], loss));
    gru_worst = std::max(gru_worst, fd_worst(h0, grads.back(), loss));
    for (nn::Tensor* p : cell.params())
      gru_worst = std::max(gru_worst, fd_worst(p->value, p->grad, loss));
  }

  // d(-mean_b Q(s_b, pi(s_b)))/d(actor) through each critic family.
  double actor_worst = 0.0;
  for (int c = 0; c < kConfigs; ++c) {
    AgentSpec spec;
    spec.grid = RegionGrid(uniform_int(rng, 1, 3), uniform_int(rng, 1, 3), 500, 500);
    spec.budget = 100;
    spec.total_supply = 50;
    spec.mean_slot_requests = 20;
    ActorCriticConfig cfg;
    cfg.actor_hidden = uniform_int(rng, 2, 6);
    cfg.critic_hidden = uniform_int(rng, 2, 6);
    cfg.gru_hidden = uniform_int(rng, 2, 5);
    cfg.head_hidden = uniform_int(rng, 2, 5);
    cfg.local_hidden = uniform_int(rng, 2, 5);
    cfg.final_layer_init = 0.0;
    cfg.seed = 1000 + c;
    const auto make = c % 3 == 0 ? make_ddpg : c % 3 == 1 ? make_hra : make_hrp;
    auto agent = make(spec, cfg);
    // Zero biases put dead ReLU layers exactly on the kink, where central
    // differences see half the slope; generic parameters avoid that.
    randomize(agent->actor().params(), rng);
    randomize(agent->critic().params(), rng);
    const Matrix s = random_matrix(agent->layout().state_size(), uniform_int(rng, 1, 4), rng, 0.0, 1.0);
    auto objective = [&] {
      return -agent->critic().q_values(s, agent->actor().forward(s)).mean();
    };
    nn::zero_grads(agent->actor().params());
    agent->accumulate_actor_gradient(s);
    for (nn::Tensor* p : agent->actor().params())
      actor_worst = std::max(actor_worst, fd_worst(p->value, p->grad, objective));
  }

  Verdict v;
  v.pass = dense_worst < 1e-4 && gru_worst < 1e-4 && actor_worst < 1e-3;
  v.detail = format("max rel err dense %.2e, GRU %.2e (tol 1e-4), actor chain %.2e (tol 1e-3), "
                    "%d configs each",
                    dense_worst, gru_worst, actor_worst, kConfigs);
  return v;
}

// ----------------------------------------------------------- decomposition

Verdict criterion_decomposition() {
  constexpr int kCritics = 50, kPerCritic = 20;
  Rng rng(202);
  int mismatched = 0, mismatched_zeroed = 0;
  for (int c = 0; c < kCritics; ++c) {
    const RegionGrid grid(uniform_int(rng, 1, 4), uniform_int(rng, 1, 4), 500, 500);
    const auto layout = StateLayout::from_grid(grid, uniform_int(rng, 1, 8));
    ActorCriticConfig cfg;
    cfg.gru_hidden = uniform_int(rng, 2, 8);
    cfg.head_hidden = uniform_int(rng, 2, 8);
    cfg.local_hidden = uniform_int(rng, 2, 8);
    cfg.final_layer_init = c % 2 ? 0.0 : 3e-3;
    DecomposedCritic critic(layout, true, cfg, rng);
    const int n = layout.regions;
    const Matrix s = random_matrix(layout.state_size(), kPerCritic, rng, -2.0, 2.0);
    const Matrix a = random_matrix(n, kPerCritic, rng, 0.0, 1.0);

    Matrix expected = critic.sub_q(s, a, 0) + critic.local_correction(s, a, 0);
    for (int j = 1; j < n; ++j) expected += critic.sub_q(s, a, j) + critic.local_correction(s, a, j);
    const Matrix q = critic.q_values(s, a);
    for (int b = 0; b < kPerCritic; ++b) mismatched += q(0, b) != expected(0, b);

    critic.zero_local_modules();
    Matrix subs = critic.sub_q(s, a, 0);
    for (int j = 1; j < n; ++j) subs += critic.sub_q(s, a, j);
    const Matrix q0 = critic.q_values(s, a);
    for (int b = 0; b < kPerCritic; ++b) mismatched_zeroed += q0(0, b) != subs(0, b);
  }
  Verdict v;
  v.pass = mismatched == 0 && mismatched_zeroed == 0;
  v.detail = format("%d inputs: %d differ from sum(sub-Q + f_j), %d differ from sum(sub-Q) with f_j "
                    "zeroed",
                    kCritics * kPerCritic, mismatched, mismatched_zeroed);
  return v;
}

// -------------------------------------------------------------- simulator

Verdict criterion_simulator() {
  constexpr int kEpisodes = 100;
  Rng rng(303);
  std::int64_t minute_violations = 0, budget_violations = 0, reward_violations = 0, minutes = 0;
  for (int e = 0; e < kEpisodes; ++e) {
    SimConfig c;
    c.grid = RegionGrid(4, 4, 500, 500);
    SyntheticDemandParams p;
    p.regions = 16;
    p.daily_volume = uniform_int(rng, 500, 3000);
    p.seed = static_cast<std::uint64_t>(e + 1);
    c.demand = synthesize_demand(p).demand;
    c.total_supply = uniform_int(rng, 0, 300);
    c.budget = uniform_int(rng, 0, 300);
    c.travel_mode = e % 2 ? TravelMode::kSameSlot : TravelMode::kSampled;
    Simulator sim(c);
    double last_rb = c.budget;
    sim.set_minute_observer([&](int, const Simulator& s) {
      ++minutes;
      if (s.bike_census().total() != c.total_supply) ++minute_violations;
      const double rb = s.state().remaining_budget;
      if (rb < 0.0 || rb > last_rb) ++budget_violations;
      last_rb = rb;
    });
    sim.reset(static_cast<std::uint64_t>(e));
    std::uniform_real_distribution<double> price(0.0, c.p_max);
    while (!sim.done()) {
      const double rb_before = sim.state().remaining_budget;
      PriceAction a(16);
      for (double& x : a.price) x = price(rng);
      const StepOutcome out = sim.step(a);
      const int served = std::accumulate(out.served.begin(), out.served.end(), 0);
      const int unsat = std::accumulate(out.unsatisfied.begin(), out.unsatisfied.end(), 0);
      const double spent = std::accumulate(out.expenses.begin(), out.expenses.end(), 0.0);
      if (out.reward != served || out.reward != out.requests - unsat) ++reward_violations;
      if (spent > rb_before + 1e-9 ||
          std::abs(sim.state().remaining_budget - (rb_before - spent)) > 1e-9)
        ++budget_violations;
    }
  }
  Verdict v;
  v.pass = minutes > 0 && minute_violations == 0 && budget_violations == 0 && reward_violations == 0;
  v.detail = format("%d episodes on 4x4, %lld minutes checked: %lld conservation, %lld budget, "
                    "%lld reward-identity violations",
                    kEpisodes, static_cast<long long>(minutes),
                    static_cast<long long>(minute_violations),
                    static_cast<long long>(budget_violations),
                    static_cast<long long>(reward_violations));
  return v;
}

// -------------------------------------------------------- branch and bound

Verdict criterion_ilp_oracle() {
  constexpr int kInstances = 50;
  std::mt19937_64 rng(404);
  int agree = 0, feasible = 0, largest = 0;
  for (int k = 0; k < kInstances; ++k) {
    const int vars = 2 + k % 11;
    largest = std::max(largest, vars);
    const LinearProgram lp = oracle::random_tiny_ilp(rng, vars, 1 + k % 5, 3);
    const auto expect = oracle::brute_force_ilp(lp);
    const IlpResult got = solve_ilp(lp);
    if (expect) ++feasible;
    const bool same = got.feasible == expect.has_value() &&
                      (!expect || (got.exact && got.objective == *expect &&
                                   lp.feasible(got.x, 1e-9) && lp.evaluate(got.x) == *expect));
    agree += same;
  }
  Verdict v;
  v.pass = agree == kInstances;
  v.detail = format("%d/%d instances match brute force exactly (%d feasible, up to %d variables, "
                    "bounds <= 3)",
                    agree, kInstances, feasible, largest);
  return v;
}

// ----------------------------------------------------- experiment helpers

ExperimentConfig load_config(const std::string& dir, const std::string& file) {
  return ExperimentConfig::load((fs::path(dir) / file).string());
}

ExperimentResults run_and_save(const ExperimentConfig& cfg, const std::string& out_dir) {
  ExperimentResults r = run_experiment(cfg);
  write_results(r, (fs::path(out_dir) / cfg.name).string());
  return r;
}

const ResultRow* find_row(const std::vector<ResultRow>& rows, const std::string& setting,
                          std::uint64_t seed, const std::string& agent) {
  for (const auto& r : rows)
    if (r.setting == setting && r.seed == seed && r.agent == agent) return &r;
  return nullptr;
}

std::vector<std::string> settings_of(const std::vector<ResultRow>& rows) {
  std::vector<std::string> out;
  for (const auto& r : rows)
    if (std::find(out.begin(), out.end(), r.setting) == out.end()) out.push_back(r.setting);
  return out;
}

// ILP rows are "ILP-V<v>" when solved to proven optimality, "ILP-V<v>*" otherwise.
const ResultRow* find_ilp(const std::vector<ResultRow>& rows, const std::string& setting,
                          std::uint64_t seed, int v, bool* exact) {
  const std::string name = "ILP-V" + std::to_string(v);
  if (const ResultRow* r = find_row(rows, setting, seed, name)) {
    *exact = true;
    return r;
  }
  *exact = false;
  return find_row(rows, setting, seed, name + "*");
}

// ------------------------------------------------ V-horizon and upper bound

struct OptimalityVerdicts {
  Verdict monotone;
  Verdict bound;
};

OptimalityVerdicts criteria_optimality(const std::string& config_dir, const std::string& out_dir) {
  const ExperimentConfig cfg = load_config(config_dir, "optimality.json");
  const ExperimentResults res = run_and_save(cfg, out_dir);
  const std::string setting = settings_of(res.rows).front();

  int monotone = 0, hrp_ahead = 0, bound_ok = 0, inexact = 0;
  double worst_gap = -1e300;
  std::string worst_agent;
  for (std::uint64_t seed : cfg.seeds) {
    bool e1 = false, e4 = false, e24 = false;
    const ResultRow* v1 = find_ilp(res.rows, setting, seed, 1, &e1);
    const ResultRow* v4 = find_ilp(res.rows, setting, seed, 4, &e4);
    const ResultRow* v24 = find_ilp(res.rows, setting, seed, 24, &e24);
    if (!v1 || !v4 || !v24) throw std::runtime_error("optimality config must list horizons 1, 4, 24");
    inexact += !e1 + !e4 + !e24;
    monotone += v1->served <= v4->served && v4->served <= v24->served;

    const ResultRow* hrp = find_row(res.rows, setting, seed, "HRP");
    const ResultRow* hra = find_row(res.rows, setting, seed, "HRA");
    if (!hrp || !hra) throw std::runtime_error("optimality config must include HRA and HRP");
    hrp_ahead += hrp->served >= hra->served;

    bool seed_ok = e24;
    for (const auto& r : res.rows) {
      if (r.seed != seed || r.setting != setting || r.agent.rfind("ILP-V", 0) == 0) continue;
      const double gap = r.served_max - v24->served;
      if (gap > worst_gap) {
        worst_gap = gap;
        worst_agent = r.agent;
      }
      seed_ok = seed_ok && r.served_max <= v24->served;
    }
    bound_ok += seed_ok;
  }
  const int n = static_cast<int>(cfg.seeds.size());
  OptimalityVerdicts out;
  out.monotone.pass = n >= 10 && monotone * 10 >= 9 * n && hrp_ahead * 10 >= 8 * n;
  out.monotone.detail =
      format("served V1 <= V4 <= V24 in %d/%d instances (need 9/10), HRP served >= HRA in %d/%d "
             "seeds (need 8/10), %d inexact ILP solves",
             monotone, n, hrp_ahead, n, inexact);
  out.bound.pass = bound_ok == n;
  out.bound.detail =
      format("%d/%d seeds with every agent's best test episode <= exact V24 optimum; closest "
             "agent %s at %+.0f requests",
             bound_ok, n, worst_agent.c_str(), worst_gap);
  return out;
}

// --------------------------------------------------------- training loss

Verdict criterion_loss(const std::string& config_dir, const std::string& out_dir) {
  const ExperimentConfig cfg = load_config(config_dir, "loss_curve.json");
  const ExperimentResults res = run_and_save(cfg, out_dir);
  const std::string setting = settings_of(res.rows).front();
  int converged = 0, ordered = 0;
  std::string per_seed;
  for (std::uint64_t seed : cfg.seeds) {
    std::vector<double> first;
    for (const auto& l : res.losses)
      if (l.seed == seed && l.agent == "HRP" && l.episode < 10 && !std::isnan(l.critic_loss))
        first.push_back(l.critic_loss);
    const double first_mean =
        first.empty() ? std::nan("")
                      : std::accumulate(first.begin(), first.end(), 0.0) / first.size();
    const ResultRow* hrp = find_row(res.rows, setting, seed, "HRP");
    const ResultRow* hra = find_row(res.rows, setting, seed, "HRA");
    const ResultRow* ddpg = find_row(res.rows, setting, seed, "DDPG");
    if (!hrp || !hra || !ddpg) throw std::runtime_error("loss config must include DDPG, HRA, HRP");
    converged += hrp->final_loss < first_mean;
    ordered += hrp->final_loss < hra->final_loss && hra->final_loss < ddpg->final_loss;
    per_seed += format(" [seed %llu: HRP %.4f->%.4f, HRA %.4f, DDPG %.4f]",
                       static_cast<unsigned long long>(seed), first_mean, hrp->final_loss,
                       hra->final_loss, ddpg->final_loss);
  }
  const int n = static_cast<int>(cfg.seeds.size());
  Verdict v;
  v.pass = n >= 5 && converged == n && ordered * 5 >= 4 * n;
  v.detail = format("HRP last-10 < first-10 loss in %d/%d seeds, HRP < HRA < DDPG in %d/%d "
                    "(need 4/5);",
                    converged, n, ordered, n) +
             per_seed;
  return v;
}

// ----------------------------------------------------- agent ordering, KL

struct BudgetVerdicts {
  Verdict ordering;
  Verdict kl;
};

BudgetVerdicts criteria_budget(const std::string& config_dir, const std::string& out_dir) {
  const ExperimentConfig cfg = load_config(config_dir, "vary_budget.json");
  const ExperimentResults res = run_and_save(cfg, out_dir);
  const auto settings = settings_of(res.rows);
  int ordered = 0, kl_ok = 0, in_band = 0, cells = 0;
  double dur_lo = 1e300, dur_hi = -1e300;
  for (std::uint64_t seed : cfg.seeds) {
    bool all = true;
    double kl_hrp = 0.0, kl_base = 0.0;
    for (const auto& s : settings) {
      const ResultRow* hrp = find_row(res.rows, s, seed, "HRP");
      const ResultRow* hra = find_row(res.rows, s, seed, "HRA");
      const ResultRow* rnd = find_row(res.rows, s, seed, "Random");
      if (!hrp || !hra || !rnd) throw std::runtime_error("budget config must include Random, HRA, HRP");
      all = all && hrp->dur > hra->dur && hrp->dur > rnd->dur;
      kl_hrp += hrp->kl;
      kl_base += hrp->baseline_kl;
      dur_lo = std::min(dur_lo, hrp->dur);
      dur_hi = std::max(dur_hi, hrp->dur);
      in_band += hrp->dur >= 30.0 && hrp->dur <= 70.0;
      ++cells;
    }
    ordered += all;
    kl_ok += kl_hrp <= kl_base;
  }
  const int n = static_cast<int>(cfg.seeds.size());
  BudgetVerdicts out;
  out.ordering.pass = n >= 5 && settings.size() >= 3 && ordered * 5 >= 4 * n;
  out.ordering.detail =
      format("HRP DUR > HRA and > Random at all %zu budget levels in %d/%d seeds (need 4/5); "
             "HRP DUR %.1f%%..%.1f%%, %d/%d cells inside the 30-70%% band (reported only)",
             settings.size(), ordered, n, dur_lo, dur_hi, in_band, cells);
  out.kl.pass = kl_ok * 5 >= 4 * n;
  out.kl.detail = format("KL(HRP) <= KL(zero-price baseline), averaged over the budget levels, in "
                         "%d/%d seeds (need 4/5)",
                         kl_ok, n);
  return out;
}

Verdict criterion_kl_example() {
  // Begin {2, 2}, end {1, 3}: 0.5 ln(0.5/0.25) + 0.5 ln(0.5/0.75).
  const double closed_form = 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0);
  Census begin{{2, 2}, 0}, end{{1, 3}, 0};
  const double got = kl_divergence(begin, end);
  Verdict v;
  v.pass = std::abs(got - closed_form) < 1e-6 && std::abs(got - 0.1438) < 1e-4;
  v.detail = format("two-region example %.7f nats, closed form %.7f", got, closed_form);
  return v;
}

// ------------------------------------------------------------ determinism

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Verdict criterion_determinism(const std::string& config_dir, const std::string& out_dir) {
  ExperimentConfig cfg = load_config(config_dir, "determinism.json");
  const fs::path a = fs::path(out_dir) / (cfg.name + "_a");
  const fs::path b = fs::path(out_dir) / (cfg.name + "_b");
  cfg.workers = 1;
  write_results(run_experiment(cfg), a.string());
  cfg.workers = 2;
  write_results(run_experiment(cfg), b.string());
  const std::string ra = slurp(a / "results.csv"), rb = slurp(b / "results.csv");
  Verdict v;
  v.pass = !ra.empty() && ra == rb;
  v.detail = format("results.csv %zu bytes, %s across two runs (1 and 2 workers)", ra.size(),
                    ra == rb ? "identical" : "DIFFERENT");
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::vector<int> only;
  std::string config_dir = std::string(REBAL_CONFIG_DIR) + "/acceptance";
  std::string out_dir = "acceptance_out";
  app.add_option("--only", only, "Criteria to run (default: all)")->delimiter(',');
  app.add_option("--configs", config_dir, "Directory with the acceptance configs");
  app.add_option("--out", out_dir, "Where experiment outputs are written");
  CLI11_PARSE(app, argc, argv);

  const std::set<int> selected(only.begin(), only.end());
  auto wanted = [&](int c) { return selected.empty() || selected.count(c) > 0; };
  fs::create_directories(out_dir);

  int failed = 0;
  auto report = [&](const std::string& id, const std::string& title, const Verdict& v,
                    double seconds, double limit_seconds) {
    const bool in_time = limit_seconds <= 0.0 || seconds <= limit_seconds;
    const bool ok = v.pass && in_time;
    failed += !ok;
    std::string timing = format("%.1fs", seconds);
    if (limit_seconds > 0.0) timing += format(" of %.0fs allowed", limit_seconds);
    std::printf("criterion %-3s %s  %s: %s (%s)\n", id.c_str(), ok ? "PASS" : "FAIL", title.c_str(),
                v.detail.c_str(), timing.c_str());
    std::fflush(stdout);
  };
  auto timed = [](auto&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    auto value = fn();
    return std::pair{std::move(value),
                     std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
  };
  auto guarded = [&](const std::string& id, const std::string& title, double limit, auto&& fn) {
    try {
      auto [v, s] = timed(fn);
      report(id, title, v, s, limit);
    } catch (const std::exception& e) {
      report(id, title, Verdict{false, std::string("error: ") + e.what()}, 0.0, 0.0);
    }
  };

  if (wanted(1)) guarded("1", "gradient exactness", 60, criterion_gradients);
  if (wanted(2)) guarded("2", "critic decomposition identity", 60, criterion_decomposition);
  if (wanted(3)) guarded("3", "simulator conservation and budget safety", 120, criterion_simulator);
  if (wanted(4)) guarded("4", "branch and bound vs brute force", 60, criterion_ilp_oracle);

  if (wanted(5) || wanted(8)) {
    try {
      auto [v, s] = timed([&] { return criteria_optimality(config_dir, out_dir); });
      if (wanted(5)) report("5", "V-horizon monotonicity and HRP vs HRA served", v.monotone, s, 1800);
      if (wanted(8)) report("8", "offline upper bound", v.bound, s, 0);
    } catch (const std::exception& e) {
      const Verdict err{false, std::string("error: ") + e.what()};
      if (wanted(5)) report("5", "V-horizon monotonicity and HRP vs HRA served", err, 0, 0);
      if (wanted(8)) report("8", "offline upper bound", err, 0, 0);
    }
  }
  if (wanted(6))
    guarded("6", "training-loss ordering", 3600, [&] { return criterion_loss(config_dir, out_dir); });

  std::optional<BudgetVerdicts> budget;
  double budget_seconds = 0.0;
  if (wanted(7) || wanted(9)) {
    try {
      auto [v, s] = timed([&] { return criteria_budget(config_dir, out_dir); });
      budget = v;
      budget_seconds = s;
    } catch (const std::exception& e) {
      budget = BudgetVerdicts{{false, std::string("error: ") + e.what()},
                              {false, std::string("error: ") + e.what()}};
    }
  }
  if (wanted(7)) report("7", "agent ordering across budgets", budget->ordering, budget_seconds, 0);
  if (wanted(9)) {
    auto [hand, s] = timed(criterion_kl_example);
    const Verdict both{hand.pass && budget->kl.pass, hand.detail + "; " + budget->kl.detail};
    report("9", "KL pipeline", both, s + budget_seconds, 0);
  }
  if (wanted(10))
    guarded("10", "determinism", 0, [&] { return criterion_determinism(config_dir, out_dir); });

  std::printf("%s: %d failing\n", failed ? "FAILED" : "ALL PASSED", failed);
  return failed ? 1 : 0;
}
