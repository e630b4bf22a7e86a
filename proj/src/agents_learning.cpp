#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "rebal/agents.hpp"

namespace rebal {

using nn::Matrix;

FeatureScaler FeatureScaler::from_spec(const AgentSpec& spec) {
  const double n = std::max(1, spec.regions());
  FeatureScaler s;
  s.supply_scale = 1.0 / std::max(1.0, spec.total_supply / n);
  s.demand_scale = 1.0 / std::max(1.0, spec.mean_slot_requests / n);
  s.expense_scale =
      1.0 / std::max(spec.p_max, spec.budget / (n * std::max(1, spec.slots_per_episode)));
  s.budget_scale = 1.0 / std::max(1.0, spec.budget);
  return s;
}

std::vector<double> FeatureScaler::encode(const Observation& obs) const {
  std::vector<double> flat = obs.flatten();
  const int f = obs.features_per_region();
  for (int i = 0; i < obs.regions; ++i) {
    double* block = &flat[static_cast<std::size_t>(i) * f];
    block[0] *= supply_scale;
    block[1] *= demand_scale;
    block[2] *= demand_scale;
    block[3] *= expense_scale;
  }
  flat.back() *= budget_scale;
  return flat;
}

// ---------------------------------------------------------------- replay

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("ReplayBuffer: zero capacity");
}

void ReplayBuffer::push(Transition t) {
  if (items_.size() < capacity_) {
    items_.push_back(std::move(t));
  } else {
    items_[next_] = std::move(t);
  }
  next_ = (next_ + 1) % capacity_;
}

std::vector<std::size_t> ReplayBuffer::sample_indices(std::size_t count, Rng& rng) const {
  if (items_.empty()) throw std::logic_error("ReplayBuffer: sampling from empty buffer");
  std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
  std::vector<std::size_t> out(count);
  for (auto& k : out) k = pick(rng);
  return out;
}

// ---------------------------------------------------------------- layout

StateLayout StateLayout::from_grid(const RegionGrid& grid, int window) {
  StateLayout l;
  l.regions = grid.size();
  l.window = window;
  l.features = Observation::kBaseFeatures + window;
  l.neighbor_slots.resize(static_cast<std::size_t>(l.regions));
  for (int j = 0; j < l.regions; ++j) {
    auto nb = grid.neighbors(j);
    nb.resize(kNeighborSlots, -1);
    l.neighbor_slots[j] = std::move(nb);
  }
  return l;
}

Matrix StateLayout::sub_state(const Matrix& s, int j) const {
  Matrix out(features + 1, s.cols());
  out.topRows(features) = s.middleRows(j * features, features);
  out.bottomRows(1) = s.row(budget_row());
  return out;
}

Matrix StateLayout::neighbor_states(const Matrix& s, int j) const {
  Matrix out = Matrix::Zero(kNeighborSlots * features, s.cols());
  for (int k = 0; k < kNeighborSlots; ++k) {
    const int r = neighbor_slots[j][k];
    if (r >= 0) out.middleRows(k * features, features) = s.middleRows(r * features, features);
  }
  return out;
}

Matrix StateLayout::unservice_step(const Matrix& s, int j, int k) const {
  return s.row(j * features + Observation::kBaseFeatures + k);
}

Matrix StateLayout::static_features(const Matrix& s, int j) const {
  Matrix out(Observation::kBaseFeatures + 1, s.cols());
  out.topRows(Observation::kBaseFeatures) = s.middleRows(j * features, Observation::kBaseFeatures);
  out.bottomRows(1) = s.row(budget_row());
  return out;
}

// ---------------------------------------------------------------- critics

Matrix Critic::q_values(const Matrix& s, const Matrix& a) const {
  const Matrix c = components(s, a);
  Matrix q = c.row(0);
  for (Eigen::Index j = 1; j < c.rows(); ++j) q += c.row(j);
  return q;
}

void Critic::backward(const Matrix& s, const Matrix& a, const Matrix& g) {
  train_forward(s, a);
  train_backward(g);
}

nn::ConstParamList Critic::params() const {
  return nn::as_const(const_cast<Critic*>(this)->params());
}

MlpCritic::MlpCritic(int state_size, int regions, int hidden, Rng& rng, double out_init)
    : regions_(regions),
      net_({state_size + regions, hidden, hidden, 1}, nn::Activation::kRelu,
           nn::Activation::kIdentity, rng, "critic", out_init) {}

namespace {

Matrix stack(const Matrix& top, const Matrix& bottom) {
  Matrix out(top.rows() + bottom.rows(), top.cols());
  out.topRows(top.rows()) = top;
  out.bottomRows(bottom.rows()) = bottom;
  return out;
}

}  // namespace

Matrix MlpCritic::components(const Matrix& s, const Matrix& a) const {
  return net_.forward(stack(s, a));
}

Matrix MlpCritic::train_forward(const Matrix& s, const Matrix& a) {
  return net_.forward(stack(s, a), &cache_);
}

void MlpCritic::train_backward(const Matrix& g) { net_.backward(cache_, g); }

Matrix MlpCritic::action_gradient(const Matrix& s, const Matrix& a, Matrix* q) const {
  nn::Mlp::Tape tape;
  const Matrix out = net_.forward(stack(s, a), &tape);
  if (q) *q = out;
  const Matrix dx = net_.backward_input(tape, Matrix::Ones(1, s.cols()));
  return dx.bottomRows(regions_);
}

SubCritic::SubCritic(int window, int gru_hidden, int head_hidden, Rng& rng,
                     const std::string& name, double out_init)
    : gru(1, gru_hidden, rng, name + ".gru"),
      head({gru_hidden + Observation::kBaseFeatures + 2, head_hidden, 1}, nn::Activation::kRelu,
           nn::Activation::kIdentity, rng, name + ".head", out_init) {
  (void)window;
}

DecomposedCritic::DecomposedCritic(StateLayout layout, bool localized,
                                   const ActorCriticConfig& cfg, Rng& rng)
    : layout_(std::move(layout)), localized_(localized), gru_hidden_(cfg.gru_hidden) {
  const int n = layout_.regions;
  subs_.reserve(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j)
    subs_.emplace_back(layout_.window, cfg.gru_hidden, cfg.head_hidden, rng,
                       "sub" + std::to_string(j), cfg.final_layer_init);
  if (localized_) {
    const int in = (layout_.features + 1) + StateLayout::kNeighborSlots * layout_.features + 1;
    for (int j = 0; j < n; ++j)
      locals_.emplace_back(std::vector<int>{in, cfg.local_hidden, 1}, nn::Activation::kRelu,
                           nn::Activation::kIdentity, rng, "local" + std::to_string(j),
                           cfg.final_layer_init);
  }
}

Matrix DecomposedCritic::region_hidden(const Matrix& s, int j,
                                       nn::GruCell::SequenceTape* tape) const {
  std::vector<Matrix> xs;
  xs.reserve(static_cast<std::size_t>(layout_.window));
  for (int k = 0; k < layout_.window; ++k) xs.push_back(layout_.unservice_step(s, j, k));
  return subs_[j].gru.run(xs, Matrix::Zero(gru_hidden_, s.cols()), tape);
}

Matrix DecomposedCritic::head_input(const Matrix& s, const Matrix& a, int j,
                                    const Matrix& h) const {
  return stack(stack(h, layout_.static_features(s, j)), a.row(j));
}

Matrix DecomposedCritic::local_input(const Matrix& s, const Matrix& a, int j) const {
  return stack(stack(layout_.sub_state(s, j), layout_.neighbor_states(s, j)), a.row(j));
}

Matrix DecomposedCritic::sub_q(const Matrix& s, const Matrix& a, int j) const {
  const Matrix h = region_hidden(s, j, nullptr);
  return subs_[j].head.forward(head_input(s, a, j, h));
}

Matrix DecomposedCritic::local_correction(const Matrix& s, const Matrix& a, int j) const {
  if (!localized_) return Matrix::Zero(1, s.cols());
  return locals_[j].forward(local_input(s, a, j));
}

Matrix DecomposedCritic::components(const Matrix& s, const Matrix& a) const {
  Matrix out(layout_.regions, s.cols());
  for (int j = 0; j < layout_.regions; ++j) {
    if (localized_)
      out.row(j) = sub_q(s, a, j) + local_correction(s, a, j);
    else
      out.row(j) = sub_q(s, a, j);
  }
  return out;
}

Matrix DecomposedCritic::train_forward(const Matrix& s, const Matrix& a) {
  cache_.resize(static_cast<std::size_t>(layout_.regions));
  Matrix out(layout_.regions, s.cols());
  for (int j = 0; j < layout_.regions; ++j) {
    RegionTape& tape = cache_[j];
    const Matrix h = region_hidden(s, j, &tape.gru);
    const Matrix q = subs_[j].head.forward(head_input(s, a, j, h), &tape.head);
    if (localized_)
      out.row(j) = q + locals_[j].forward(local_input(s, a, j), &tape.local);
    else
      out.row(j) = q;
  }
  return out;
}

void DecomposedCritic::train_backward(const Matrix& g) {
  for (int j = 0; j < layout_.regions; ++j) {
    const Matrix gj = g.row(j);
    RegionTape& tape = cache_[j];
    const Matrix dx = subs_[j].head.backward(tape.head, gj);
    subs_[j].gru.backward_sequence(tape.gru, dx.topRows(gru_hidden_));
    if (localized_) locals_[j].backward(tape.local, gj);
  }
}

Matrix DecomposedCritic::action_gradient(const Matrix& s, const Matrix& a, Matrix* q) const {
  Matrix out(layout_.regions, s.cols());
  const Matrix ones = Matrix::Ones(1, s.cols());
  if (q) q->setZero(1, s.cols());
  for (int j = 0; j < layout_.regions; ++j) {
    RegionTape tape;
    const Matrix h = region_hidden(s, j, nullptr);
    Matrix qj = subs_[j].head.forward(head_input(s, a, j, h), &tape.head);
    Matrix d = subs_[j].head.backward_input(tape.head, ones).bottomRows(1);
    if (localized_) {
      qj += locals_[j].forward(local_input(s, a, j), &tape.local);
      d += locals_[j].backward_input(tape.local, ones).bottomRows(1);
    }
    if (q) *q += qj;
    out.row(j) = d;
  }
  return out;
}

nn::ParamList DecomposedCritic::params() {
  nn::ParamList out;
  for (int j = 0; j < layout_.regions; ++j) {
    for (auto* p : subs_[j].gru.params()) out.push_back(p);
    for (auto* p : subs_[j].head.params()) out.push_back(p);
    if (localized_)
      for (auto* p : locals_[j].params()) out.push_back(p);
  }
  return out;
}

void DecomposedCritic::zero_local_modules() {
  for (auto& m : locals_)
    for (auto* p : m.params()) p->value.setZero();
}

// ---------------------------------------------------------------- trainer

ActorCriticAgent::ActorCriticAgent(std::string name, const AgentSpec& spec, ActorCriticConfig cfg,
                                   CriticKind critic, CriticTarget target)
    : name_(std::move(name)),
      spec_(spec),
      cfg_(cfg),
      target_mode_(target),
      scaler_(FeatureScaler::from_spec(spec)),
      layout_(StateLayout::from_grid(spec.grid, spec.window)),
      reward_scale_(cfg.reward_scale > 0.0 ? cfg.reward_scale
                                           : 1.0 / std::max(1.0, spec.mean_slot_requests)),
      rng_(cfg.seed),
      buffer_(cfg.buffer_capacity) {
  const int n = spec.regions();
  const int obs = layout_.state_size();
  if (target == CriticTarget::kPerRegion && critic == CriticKind::kMonolithic)
    throw std::invalid_argument("per-region targets need a decomposed critic");
  actor_ = nn::Mlp({obs, cfg.actor_hidden, cfg.actor_hidden, n}, nn::Activation::kRelu,
                   nn::Activation::kSigmoid, rng_, "actor", cfg.final_layer_init);
  target_actor_ = actor_;
  switch (critic) {
    case CriticKind::kMonolithic:
      critic_ = std::make_unique<MlpCritic>(obs, n, cfg.critic_hidden, rng_, cfg.final_layer_init);
      break;
    case CriticKind::kDecomposed:
      critic_ = std::make_unique<DecomposedCritic>(layout_, false, cfg, rng_);
      break;
    case CriticKind::kDecomposedLocalized:
      critic_ = std::make_unique<DecomposedCritic>(layout_, true, cfg, rng_);
      break;
  }
  target_critic_ = critic_->clone();
  actor_opt_ = nn::Adam(actor_.params(), {cfg.actor_lr, 0.9, 0.999, 1e-8, cfg.clip_norm});
  critic_opt_ = nn::Adam(critic_->params(), {cfg.critic_lr, 0.9, 0.999, 1e-8, cfg.clip_norm});
}

void ActorCriticAgent::begin_episode(int episode, bool training) {
  training_ = training;
  const double span = std::max(1, cfg_.noise_anneal_episodes - 1);
  const double frac = std::clamp(episode / span, 0.0, 1.0);
  sigma_ = cfg_.noise_start + (cfg_.noise_end - cfg_.noise_start) * frac;
}

PriceAction ActorCriticAgent::policy(const Observation& obs) const {
  const std::vector<double> x = scaler_.encode(obs);
  const Matrix in = Eigen::Map<const Matrix>(x.data(), static_cast<Eigen::Index>(x.size()), 1);
  const Matrix out = actor_.forward(in);
  PriceAction a(spec_.regions());
  for (int i = 0; i < a.size(); ++i) a.price[i] = spec_.p_max * out(i, 0);
  return a.clipped(spec_.p_max);
}

PriceAction ActorCriticAgent::act(const Observation& obs) {
  if (warming_) {
    std::uniform_real_distribution<double> u(0.0, spec_.p_max);
    PriceAction a(spec_.regions());
    for (double& p : a.price) p = u(rng_);
    return a;
  }
  PriceAction a = policy(obs);
  if (!training_) return a;
  std::normal_distribution<double> noise(0.0, sigma_);
  for (double& p : a.price) p += noise(rng_);
  return a.clipped(spec_.p_max);
}

Transition ActorCriticAgent::make_transition(const Observation& obs, const PriceAction& action,
                                             const StepOutcome& outcome) const {
  Transition t;
  t.state = scaler_.encode(obs);
  const PriceAction a = action.clipped(spec_.p_max);
  t.action.resize(a.price.size());
  for (std::size_t i = 0; i < a.price.size(); ++i) t.action[i] = a.price[i] / spec_.p_max;
  t.region_reward.resize(outcome.served.size());
  double total = 0.0;
  for (std::size_t i = 0; i < outcome.served.size(); ++i) {
    t.region_reward[i] = outcome.served[i] * reward_scale_;
    total += t.region_reward[i];
  }
  t.reward = total;
  t.next_state = scaler_.encode(outcome.next_observation);
  t.terminal = outcome.episode_done;
  return t;
}

void ActorCriticAgent::observe(const Observation& obs, const PriceAction& action,
                               const StepOutcome& outcome) {
  if (!training_) return;
  buffer_.push(make_transition(obs, action, outcome));
  if (warming_ || !ready()) return;
  for (int k = 0; k < std::max(1, cfg_.updates_per_step); ++k) diag_.push_back(train_step());
}

bool ActorCriticAgent::ready() const {
  return buffer_.size() >= std::max<std::size_t>(cfg_.warmup, cfg_.batch_size);
}

ActorCriticAgent::Batch ActorCriticAgent::make_batch(const std::vector<std::size_t>& idx) const {
  const int n = spec_.regions();
  const int obs = layout_.state_size();
  const int b = static_cast<int>(idx.size());
  Batch x;
  x.states.resize(obs, b);
  x.next_states.resize(obs, b);
  x.actions.resize(n, b);
  x.region_rewards.resize(n, b);
  x.rewards.resize(1, b);
  x.bootstrap.resize(1, b);
  for (int k = 0; k < b; ++k) {
    const Transition& t = buffer_.at(idx[k]);
    x.states.col(k) = Eigen::Map<const Eigen::VectorXd>(t.state.data(), obs);
    x.next_states.col(k) = Eigen::Map<const Eigen::VectorXd>(t.next_state.data(), obs);
    x.actions.col(k) = Eigen::Map<const Eigen::VectorXd>(t.action.data(), n);
    x.region_rewards.col(k) = Eigen::Map<const Eigen::VectorXd>(t.region_reward.data(), n);
    x.rewards(0, k) = t.reward;
    x.bootstrap(0, k) = (t.terminal && !cfg_.bootstrap_terminal) ? 0.0 : 1.0;
  }
  return x;
}

Matrix ActorCriticAgent::total_targets(const Batch& x) const {
  const Matrix next_q = target_critic_->q_values(x.next_states, target_actor_.forward(x.next_states));
  return x.rewards + cfg_.gamma * x.bootstrap.cwiseProduct(next_q);
}

Matrix ActorCriticAgent::region_targets(const Batch& x) const {
  const Matrix next =
      target_critic_->components(x.next_states, target_actor_.forward(x.next_states));
  Matrix y = x.region_rewards;
  for (Eigen::Index j = 0; j < y.rows(); ++j)
    y.row(j) += cfg_.gamma * x.bootstrap.cwiseProduct(next.row(j));
  return y;
}

double ActorCriticAgent::accumulate_actor_gradient(const Matrix& s) {
  const double b = static_cast<double>(s.cols());
  nn::Mlp::Tape tape;
  const Matrix pa = actor_.forward(s, &tape);
  Matrix q;
  const Matrix dq = critic_->action_gradient(s, pa, &q);
  actor_.backward(tape, (-1.0 / b) * dq);
  return q.mean();
}

void ActorCriticAgent::pretrain_critic(int steps) {
  if (!ready()) return;
  for (int k = 0; k < steps; ++k) train_step(true);
}

TrainDiagnostics ActorCriticAgent::train_step(bool critic_only) {
  const int b = cfg_.batch_size;
  const Batch x = make_batch(buffer_.sample_indices(static_cast<std::size_t>(b), rng_));
  const Matrix y = total_targets(x);

  nn::zero_grads(critic_->params());
  const Matrix comp = critic_->train_forward(x.states, x.actions);
  Matrix q = comp.row(0);
  for (Eigen::Index j = 1; j < comp.rows(); ++j) q += comp.row(j);
  const Matrix err = q - y;

  Matrix g(comp.rows(), b);
  if (target_mode_ == CriticTarget::kTotal) {
    for (Eigen::Index j = 0; j < comp.rows(); ++j) g.row(j) = (2.0 / b) * err;
  } else {
    g = (2.0 / b) * (comp - region_targets(x));
  }
  critic_->train_backward(g);
  critic_opt_.step();

  if (critic_only) {
    // Targets track the critic so that pretraining propagates value.
    nn::soft_update(target_critic_->params(), nn::as_const(critic_->params()), cfg_.tau);
  } else if (steps_ % std::max(1, cfg_.actor_delay) == 0) {
    nn::zero_grads(actor_.params());
    accumulate_actor_gradient(x.states);
    actor_opt_.step();
    nn::soft_update(target_actor_.params(), nn::as_const(actor_.params()), cfg_.tau);
    nn::soft_update(target_critic_->params(), nn::as_const(critic_->params()), cfg_.tau);
  }
  if (critic_only) return {steps_, err.squaredNorm() / b, q.mean()};

  ++steps_;
  TrainDiagnostics d;
  d.step = steps_;
  d.critic_loss = err.squaredNorm() / b;
  d.mean_q = q.mean();
  return d;
}

nn::ParamList ActorCriticAgent::checkpoint_params() {
  nn::ParamList out = actor_.params();
  for (auto* p : critic_->params()) out.push_back(p);
  return out;
}

void ActorCriticAgent::save(const std::string& path) {
  nn::save_checkpoint(path, nn::as_const(checkpoint_params()));
}

void ActorCriticAgent::load(const std::string& path) {
  nn::load_checkpoint(path, checkpoint_params());
  target_actor_ = actor_;
  target_critic_ = critic_->clone();
}

std::unique_ptr<ActorCriticAgent> make_ddpg(const AgentSpec& spec, const ActorCriticConfig& cfg) {
  return std::make_unique<ActorCriticAgent>("DDPG", spec, cfg, CriticKind::kMonolithic,
                                            CriticTarget::kTotal);
}

std::unique_ptr<ActorCriticAgent> make_hra(const AgentSpec& spec, const ActorCriticConfig& cfg) {
  return std::make_unique<ActorCriticAgent>("HRA", spec, cfg, CriticKind::kDecomposed,
                                            CriticTarget::kPerRegion);
}

std::unique_ptr<ActorCriticAgent> make_hrp(const AgentSpec& spec, const ActorCriticConfig& cfg) {
  return std::make_unique<ActorCriticAgent>("HRP", spec, cfg, CriticKind::kDecomposedLocalized,
                                            CriticTarget::kTotal);
}

}  // namespace rebal
