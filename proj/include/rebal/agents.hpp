#pragma once

// Pricing policies: Random, OPT-FIX, DBP-UCB and the actor-critic family
// (DDPG, HRA, HRP).

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "rebal/core.hpp"
#include "rebal/nn.hpp"
#include "rebal/sim.hpp"

namespace rebal {

/// What every agent is allowed to know about the environment up front.
struct AgentSpec {
  RegionGrid grid;
  int window = 8;
  int slots_per_episode = 24;
  double p_max = 5.0;
  double budget = 0.0;
  int total_supply = 0;
  /// Mean requests per slot over the day; scales features and rewards.
  double mean_slot_requests = 1.0;

  int regions() const { return grid.size(); }
};

class PricingAgent {
 public:
  virtual ~PricingAgent() = default;
  virtual std::string name() const = 0;
  virtual void begin_episode(int /*episode*/, bool /*training*/) {}
  virtual PriceAction act(const Observation& obs) = 0;
  /// Feedback after the environment executed `action` from `obs`.
  virtual void observe(const Observation& /*obs*/, const PriceAction& /*action*/,
                       const StepOutcome& /*outcome*/) {}
};

/// All-zero incentives: the un-incentivized reference system.
class ZeroPricer final : public PricingAgent {
 public:
  explicit ZeroPricer(int regions) : regions_(regions) {}
  std::string name() const override { return "Zero"; }
  PriceAction act(const Observation&) override { return PriceAction(regions_, 0.0); }

 private:
  int regions_;
};

class RandomPricer final : public PricingAgent {
 public:
  RandomPricer(int regions, double p_max, std::uint64_t seed);
  std::string name() const override { return "Random"; }
  PriceAction act(const Observation& obs) override;

 private:
  int regions_;
  double p_max_;
  Rng rng_;
};

/// Constant per-region price chosen offline from known cost samples.
class OptFixPricer final : public PricingAgent {
 public:
  static constexpr int kQuantiles = 21;

  /// `cost_samples[i]`: costs of users in region i who need a neighbor bike.
  /// `demand[i]`: requests originating in i (sets the budget share).
  /// `expected_offers[i]`: users in i expected to need an offer over the day.
  static PriceAction calibrate(const std::vector<std::vector<double>>& cost_samples,
                               double budget, const std::vector<double>& demand,
                               const std::vector<double>& expected_offers);
  /// Best quantile price for one region under a per-offer spending allowance.
  static double best_price(std::vector<double> costs, double allowance_per_offer);

  explicit OptFixPricer(PriceAction fixed) : fixed_(std::move(fixed)) {}
  std::string name() const override { return "OPT-FIX"; }
  PriceAction act(const Observation&) override { return fixed_; }
  const PriceAction& prices() const { return fixed_; }

 private:
  PriceAction fixed_;
};

/// UCB1 over discrete price arms for a single region. Rewards are acceptance
/// rates in [0, 1].
class UcbPriceArms {
 public:
  UcbPriceArms(int arms, double p_max);

  int arms() const { return static_cast<int>(prices_.size()); }
  double price(int arm) const { return prices_[arm]; }
  std::int64_t pulls(int arm) const { return counts_[arm]; }
  std::int64_t total_pulls() const { return total_; }
  double mean(int arm) const;

  /// clip(mean + sqrt(2 ln t / n), 0, 1) * value(arm); infinite when unpulled.
  double index(int arm, double pace) const;
  /// Budget-feasible share of users an arm can pay at the current pace.
  double arm_value(int arm, double pace) const;
  /// Skips arms priced above `remaining_budget`; falls back to arm 0.
  int select(double remaining_budget, double pace) const;
  void update(int arm, double reward);

 private:
  std::vector<double> prices_;
  std::vector<std::int64_t> counts_;
  std::vector<double> sums_;
  std::int64_t total_ = 0;
};

/// Independent budgeted UCB bandits per region. Budget pacing spreads the
/// remaining budget over the offers expected in the rest of the episode,
/// estimated from previous episodes.
class DbpUcbPricer final : public PricingAgent {
 public:
  DbpUcbPricer(int regions, int slots_per_episode, double p_max, int arms = 11);
  std::string name() const override { return "DBP-UCB"; }
  void begin_episode(int episode, bool training) override;
  PriceAction act(const Observation& obs) override;
  void observe(const Observation& obs, const PriceAction& action,
               const StepOutcome& outcome) override;

  const UcbPriceArms& region_arms(int i) const { return arms_[i]; }
  double pace(double remaining_budget) const;

 private:
  std::vector<UcbPriceArms> arms_;
  std::vector<int> pulled_;
  std::vector<double> offers_per_slot_;  // running mean over episodes
  std::vector<double> offers_this_episode_;
  int episodes_seen_ = 0;
  int step_ = 0;
  int slots_;
};

// --------------------------------------------------------------- learning

/// Fixed affine normalization of observations, shared by every learner.
struct FeatureScaler {
  double supply_scale = 1.0;
  double demand_scale = 1.0;
  double expense_scale = 1.0;
  double budget_scale = 1.0;

  static FeatureScaler from_spec(const AgentSpec& spec);
  std::vector<double> encode(const Observation& obs) const;
};

struct Transition {
  std::vector<double> state;       // scaled features
  std::vector<double> action;      // prices / p_max, in [0, 1]
  double reward = 0.0;             // scaled total reward
  std::vector<double> region_reward;
  std::vector<double> next_state;
  bool terminal = false;
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 100000);

  void push(Transition t);
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  const Transition& at(std::size_t k) const { return items_.at(k); }
  /// Uniform with replacement over the current contents.
  std::vector<std::size_t> sample_indices(std::size_t count, Rng& rng) const;

 private:
  std::size_t capacity_;
  std::size_t next_ = 0;
  std::vector<Transition> items_;
};

struct ActorCriticConfig {
  double gamma = 0.99;
  double tau = 0.001;
  double actor_lr = 1e-4;
  double critic_lr = 1e-3;
  double clip_norm = 10.0;
  int batch_size = 64;
  std::size_t buffer_capacity = 100000;
  std::size_t warmup = 1000;
  int actor_hidden = 64;
  int critic_hidden = 64;
  int gru_hidden = 32;
  int head_hidden = 32;
  int local_hidden = 32;
  double noise_start = 0.5;  // RMB
  double noise_end = 0.05;
  int noise_anneal_episodes = 100;
  /// Output layers drawn from U(-x, x) as in DDPG; 0 keeps fan-in init.
  double final_layer_init = 3e-3;
  /// Minibatch updates per stored transition.
  int updates_per_step = 1;
  /// The actor and target networks move on every k-th critic update.
  int actor_delay = 1;
  /// Critic-only updates on the warm-up buffer before the first episode.
  int critic_pretrain_steps = 0;
  /// Bootstrap through episode ends (no terminal masking).
  bool bootstrap_terminal = false;
  double reward_scale = 0.0;  // <= 0: 1 / mean_slot_requests
  std::uint64_t seed = 1;
};

/// Column-batched feature views used by the decomposed critics.
struct StateLayout {
  int regions = 0;
  int window = 8;
  int features = 12;  // per region
  std::vector<std::vector<int>> neighbor_slots;  // padded to 8 with -1

  static constexpr int kNeighborSlots = 8;
  static StateLayout from_grid(const RegionGrid& grid, int window);
  int state_size() const { return regions * features + 1; }
  int budget_row() const { return regions * features; }
  /// Region j's block plus the budget scalar (features + 1 rows).
  nn::Matrix sub_state(const nn::Matrix& states, int j) const;
  /// Neighbor blocks in row-major order, zero padded (8 * features rows).
  nn::Matrix neighbor_states(const nn::Matrix& states, int j) const;
  /// Un-service window entry k (0 = oldest) for region j, 1 x batch.
  nn::Matrix unservice_step(const nn::Matrix& states, int j, int k) const;
  /// [S, D, A, E, RB] for region j, 5 x batch.
  nn::Matrix static_features(const nn::Matrix& states, int j) const;
};

/// Q(s, a) as a sum of one or more components. Inputs are batched columns:
/// states (state_size x B), actions (regions x B, normalized).
class Critic {
 public:
  virtual ~Critic() = default;
  virtual std::unique_ptr<Critic> clone() const = 0;
  virtual int component_count() const = 0;
  /// component_count() x B
  virtual nn::Matrix components(const nn::Matrix& states, const nn::Matrix& actions) const = 0;
  /// 1 x B, the column sums of components() accumulated in component order.
  nn::Matrix q_values(const nn::Matrix& states, const nn::Matrix& actions) const;
  /// components() that also records what train_backward() needs.
  virtual nn::Matrix train_forward(const nn::Matrix& states, const nn::Matrix& actions) = 0;
  /// Accumulates parameter gradients of sum_b dot(grad_components[:, b], comp[:, b])
  /// for the batch of the last train_forward().
  virtual void train_backward(const nn::Matrix& grad_components) = 0;
  void backward(const nn::Matrix& states, const nn::Matrix& actions,
                const nn::Matrix& grad_components);
  /// d(sum of components)/d(actions), regions x B. Optionally also returns
  /// q_values() of the same inputs.
  virtual nn::Matrix action_gradient(const nn::Matrix& states, const nn::Matrix& actions,
                                     nn::Matrix* q = nullptr) const = 0;
  virtual nn::ParamList params() = 0;
  nn::ConstParamList params() const;
};

/// Monolithic MLP on [s; a].
class MlpCritic final : public Critic {
 public:
  MlpCritic(int state_size, int regions, int hidden, Rng& rng, double out_init = 0.0);
  std::unique_ptr<Critic> clone() const override { return std::make_unique<MlpCritic>(*this); }
  int component_count() const override { return 1; }
  nn::Matrix components(const nn::Matrix& s, const nn::Matrix& a) const override;
  nn::Matrix train_forward(const nn::Matrix& s, const nn::Matrix& a) override;
  void train_backward(const nn::Matrix& g) override;
  nn::Matrix action_gradient(const nn::Matrix& s, const nn::Matrix& a,
                             nn::Matrix* q = nullptr) const override;
  nn::ParamList params() override { return net_.params(); }

  nn::Mlp& net() { return net_; }

 private:
  int regions_;
  nn::Mlp net_;
  nn::Mlp::Tape cache_;
};

/// Per-region sub-critic: GRU over the un-service window, then a dense head on
/// [h; S, D, A, E, RB; p_j].
struct SubCritic {
  nn::GruCell gru;
  nn::Mlp head;

  SubCritic() = default;
  SubCritic(int window, int gru_hidden, int head_hidden, Rng& rng, const std::string& name,
            double out_init = 0.0);
};

/// Sum over regions of sub-critics, optionally plus a localized correction
/// f_j(s_j, NS(s, r_j), p_j) (two dense layers). Without the correction this
/// is the HRA critic; with it, the HRP critic.
class DecomposedCritic final : public Critic {
 public:
  DecomposedCritic(StateLayout layout, bool localized, const ActorCriticConfig& cfg, Rng& rng);
  std::unique_ptr<Critic> clone() const override {
    return std::make_unique<DecomposedCritic>(*this);
  }
  int component_count() const override { return layout_.regions; }
  nn::Matrix components(const nn::Matrix& s, const nn::Matrix& a) const override;
  nn::Matrix train_forward(const nn::Matrix& s, const nn::Matrix& a) override;
  void train_backward(const nn::Matrix& g) override;
  nn::Matrix action_gradient(const nn::Matrix& s, const nn::Matrix& a,
                             nn::Matrix* q = nullptr) const override;
  nn::ParamList params() override;

  /// Q^j(s_j, p_j), 1 x B.
  nn::Matrix sub_q(const nn::Matrix& s, const nn::Matrix& a, int j) const;
  /// f_j(s_j, NS(s, r_j), p_j), 1 x B; zero when not localized.
  nn::Matrix local_correction(const nn::Matrix& s, const nn::Matrix& a, int j) const;

  bool localized() const { return localized_; }
  const StateLayout& layout() const { return layout_; }
  SubCritic& sub_critic(int j) { return subs_[j]; }
  nn::Mlp& local_module(int j) { return locals_[j]; }
  /// Sets every localized-module parameter to zero.
  void zero_local_modules();

 private:
  struct RegionTape {
    nn::GruCell::SequenceTape gru;
    nn::Mlp::Tape head;
    nn::Mlp::Tape local;
  };
  nn::Matrix head_input(const nn::Matrix& s, const nn::Matrix& a, int j, const nn::Matrix& h) const;
  nn::Matrix local_input(const nn::Matrix& s, const nn::Matrix& a, int j) const;
  nn::Matrix region_hidden(const nn::Matrix& s, int j, nn::GruCell::SequenceTape* tape) const;

  StateLayout layout_;
  bool localized_;
  int gru_hidden_;
  std::vector<SubCritic> subs_;
  std::vector<nn::Mlp> locals_;
  std::vector<RegionTape> cache_;
};

enum class CriticKind { kMonolithic, kDecomposed, kDecomposedLocalized };
enum class CriticTarget { kTotal, kPerRegion };

struct TrainDiagnostics {
  std::int64_t step = 0;
  double critic_loss = 0.0;  // mean (Q(s,a) - y)^2 on the total
  double mean_q = 0.0;
};

/// Deterministic actor + critic trained as in DDPG: critic regression on
/// bootstrapped targets from target networks, sampled deterministic policy
/// gradient for the actor, soft target updates after each step.
class ActorCriticAgent : public PricingAgent {
 public:
  ActorCriticAgent(std::string name, const AgentSpec& spec, ActorCriticConfig cfg,
                   CriticKind critic, CriticTarget target);
  ActorCriticAgent(const ActorCriticAgent&) = delete;
  ActorCriticAgent& operator=(const ActorCriticAgent&) = delete;

  std::string name() const override { return name_; }
  void begin_episode(int episode, bool training) override;
  PriceAction act(const Observation& obs) override;
  void observe(const Observation& obs, const PriceAction& action,
               const StepOutcome& outcome) override;

  /// Deterministic policy output pi(s) without noise.
  PriceAction policy(const Observation& obs) const;
  Transition make_transition(const Observation& obs, const PriceAction& action,
                             const StepOutcome& outcome) const;
  void store(Transition t) { buffer_.push(std::move(t)); }
  bool ready() const;
  /// While on, act() draws uniform random prices and observe() only fills
  /// the replay buffer: the pre-training phase before episode 1.
  void set_warmup(bool on) { warming_ = on; }
  bool warming_up() const { return warming_; }
  bool needs_warmup() const { return !ready(); }
  /// One minibatch critic update; the actor and targets follow every
  /// actor_delay-th call unless `critic_only`.
  TrainDiagnostics train_step(bool critic_only = false);
  /// Critic-only updates, for use right after the warm-up phase.
  void pretrain_critic(int steps);

  struct Batch {
    nn::Matrix states, actions, rewards, region_rewards, next_states, bootstrap;
  };
  Batch make_batch(const std::vector<std::size_t>& indices) const;
  /// y = R + gamma * Q'(s', pi'(s')), 1 x B.
  nn::Matrix total_targets(const Batch& batch) const;
  /// y_j = R_j + gamma * Q'^j(s', pi'(s')), regions x B.
  nn::Matrix region_targets(const Batch& batch) const;
  /// Accumulates d(-mean_b Q(s_b, pi(s_b)))/d(actor params) and returns the mean Q.
  double accumulate_actor_gradient(const nn::Matrix& states);

  double exploration_sigma() const { return sigma_; }
  const ActorCriticConfig& config() const { return cfg_; }
  const FeatureScaler& scaler() const { return scaler_; }
  const StateLayout& layout() const { return layout_; }
  const ReplayBuffer& buffer() const { return buffer_; }
  const std::vector<TrainDiagnostics>& diagnostics() const { return diag_; }
  void clear_diagnostics() { diag_.clear(); }

  nn::Mlp& actor() { return actor_; }
  Critic& critic() { return *critic_; }
  const Critic& critic() const { return *critic_; }
  Critic& target_critic() { return *target_critic_; }
  nn::Mlp& target_actor() { return target_actor_; }

  /// Online actor and critic parameters, in a stable order.
  nn::ParamList checkpoint_params();
  void save(const std::string& path);
  void load(const std::string& path);

 private:
  std::string name_;
  AgentSpec spec_;
  ActorCriticConfig cfg_;
  CriticTarget target_mode_;
  FeatureScaler scaler_;
  StateLayout layout_;
  double reward_scale_;
  bool warming_ = false;
  Rng rng_;
  nn::Mlp actor_;
  nn::Mlp target_actor_;
  std::unique_ptr<Critic> critic_;
  std::unique_ptr<Critic> target_critic_;
  nn::Adam actor_opt_;
  nn::Adam critic_opt_;
  ReplayBuffer buffer_;
  bool training_ = false;
  double sigma_ = 0.0;
  std::int64_t steps_ = 0;
  std::vector<TrainDiagnostics> diag_;
};

std::unique_ptr<ActorCriticAgent> make_ddpg(const AgentSpec& spec, const ActorCriticConfig& cfg);
std::unique_ptr<ActorCriticAgent> make_hra(const AgentSpec& spec, const ActorCriticConfig& cfg);
std::unique_ptr<ActorCriticAgent> make_hrp(const AgentSpec& spec, const ActorCriticConfig& cfg);

}  // namespace rebal
