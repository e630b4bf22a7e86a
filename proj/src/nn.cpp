#include "rebal/nn.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace rebal::nn {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

void zero_grads(const ParamList& params) {
  for (Tensor* t : params) t->zero_grad();
}

double grad_norm(const ParamList& params) {
  double sq = 0.0;
  for (const Tensor* t : params) sq += t->grad.squaredNorm();
  return std::sqrt(sq);
}

ConstParamList as_const(const ParamList& params) {
  return ConstParamList(params.begin(), params.end());
}

Matrix activate(Activation act, const Matrix& pre) {
  switch (act) {
    case Activation::kIdentity:
      return pre;
    case Activation::kRelu:
      return pre.cwiseMax(0.0);
    case Activation::kTanh:
      return pre.array().tanh().matrix();
    case Activation::kSigmoid:
      return (1.0 / (1.0 + (-pre.array()).exp())).matrix();
  }
  throw std::logic_error("unknown activation");
}

Matrix activation_derivative(Activation act, const Matrix& pre, const Matrix& out) {
  switch (act) {
    case Activation::kIdentity:
      return Matrix::Ones(pre.rows(), pre.cols());
    case Activation::kRelu:
      return (pre.array() > 0.0).cast<double>().matrix();
    case Activation::kTanh:
      return (1.0 - out.array().square()).matrix();
    case Activation::kSigmoid:
      return (out.array() * (1.0 - out.array())).matrix();
  }
  throw std::logic_error("unknown activation");
}

void init_uniform_fan_in(Tensor& t, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max(1, fan_in)));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (Eigen::Index c = 0; c < t.value.cols(); ++c)
    for (Eigen::Index r = 0; r < t.value.rows(); ++r) t.value(r, c) = u(rng);
}

// ---------------------------------------------------------------- Dense

Dense::Dense(int in, int out, Activation act, Rng& rng, const std::string& name)
    : weight(name + ".weight", out, in), bias(name + ".bias", out, 1), activation(act) {
  init_uniform_fan_in(weight, in, rng);
}

Matrix Dense::forward(const Matrix& x, Tape* tape) const {
  if (x.rows() != weight.value.cols())
    throw std::invalid_argument("Dense::forward: input has " + std::to_string(x.rows()) +
                                " rows, layer expects " + std::to_string(weight.value.cols()));
  Matrix pre = weight.value * x;
  pre.colwise() += bias.value.col(0);
  Matrix out = activate(activation, pre);
  if (tape) {
    tape->input = x;
    tape->pre = std::move(pre);
    tape->output = out;
  }
  return out;
}

Matrix Dense::pre_grad(const Tape& tape, const Matrix& grad_out) const {
  if (grad_out.rows() != tape.output.rows() || grad_out.cols() != tape.output.cols())
    throw std::invalid_argument("Dense::backward: gradient shape mismatch");
  if (activation == Activation::kIdentity) return grad_out;
  return grad_out.cwiseProduct(activation_derivative(activation, tape.pre, tape.output));
}

Matrix Dense::backward(const Tape& tape, const Matrix& grad_out) {
  const Matrix dpre = pre_grad(tape, grad_out);
  weight.grad.noalias() += dpre * tape.input.transpose();
  bias.grad += dpre.rowwise().sum();
  return weight.value.transpose() * dpre;
}

Matrix Dense::backward_input(const Tape& tape, const Matrix& grad_out) const {
  return weight.value.transpose() * pre_grad(tape, grad_out);
}

// ---------------------------------------------------------------- Mlp

Mlp::Mlp(const std::vector<int>& sizes, Activation hidden_act, Activation out_act, Rng& rng,
         const std::string& name, double out_init) {
  if (sizes.size() < 2) throw std::invalid_argument("Mlp: need at least input and output sizes");
  for (std::size_t k = 0; k + 1 < sizes.size(); ++k) {
    const bool last = k + 2 == sizes.size();
    layers.emplace_back(sizes[k], sizes[k + 1], last ? out_act : hidden_act, rng,
                        name + ".l" + std::to_string(k));
  }
  if (out_init > 0.0) {
    std::uniform_real_distribution<double> u(-out_init, out_init);
    for (Tensor* t : {&layers.back().weight, &layers.back().bias})
      for (Eigen::Index c = 0; c < t->value.cols(); ++c)
        for (Eigen::Index r = 0; r < t->value.rows(); ++r) t->value(r, c) = u(rng);
  }
}

Matrix Mlp::forward(const Matrix& x, Tape* tape) const {
  if (tape) tape->layers.resize(layers.size());
  Matrix h = x;
  for (std::size_t k = 0; k < layers.size(); ++k)
    h = layers[k].forward(h, tape ? &tape->layers[k] : nullptr);
  return h;
}

Matrix Mlp::backward(const Tape& tape, const Matrix& grad_out) {
  Matrix g = grad_out;
  for (std::size_t k = layers.size(); k-- > 0;) g = layers[k].backward(tape.layers[k], g);
  return g;
}

Matrix Mlp::backward_input(const Tape& tape, const Matrix& grad_out) const {
  Matrix g = grad_out;
  for (std::size_t k = layers.size(); k-- > 0;) g = layers[k].backward_input(tape.layers[k], g);
  return g;
}

ParamList Mlp::params() {
  ParamList out;
  for (auto& l : layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

// ---------------------------------------------------------------- GRU

GruCell::GruCell(int input, int hidden, Rng& rng, const std::string& name)
    : wz(name + ".wz", hidden, input),
      uz(name + ".uz", hidden, hidden),
      bz(name + ".bz", hidden, 1),
      wr(name + ".wr", hidden, input),
      ur(name + ".ur", hidden, hidden),
      br(name + ".br", hidden, 1),
      wh(name + ".wh", hidden, input),
      uh(name + ".uh", hidden, hidden),
      bh(name + ".bh", hidden, 1) {
  for (Tensor* t : {&wz, &wr, &wh}) init_uniform_fan_in(*t, input, rng);
  for (Tensor* t : {&uz, &ur, &uh}) init_uniform_fan_in(*t, hidden, rng);
}

Matrix GruCell::step(const Matrix& x, const Matrix& h, StepTape* tape) const {
  if (x.rows() != input_size() || h.rows() != hidden_size() || x.cols() != h.cols())
    throw std::invalid_argument("GruCell::step: shape mismatch");
  Matrix az = wz.value * x + uz.value * h;
  az.colwise() += bz.value.col(0);
  Matrix ar = wr.value * x + ur.value * h;
  ar.colwise() += br.value.col(0);
  const Matrix z = activate(Activation::kSigmoid, az);
  const Matrix r = activate(Activation::kSigmoid, ar);
  Matrix rh = r.cwiseProduct(h);
  Matrix ac = wh.value * x + uh.value * rh;
  ac.colwise() += bh.value.col(0);
  const Matrix cand = ac.array().tanh().matrix();
  Matrix out = h + z.cwiseProduct(cand - h);
  if (tape) {
    tape->x = x;
    tape->h_prev = h;
    tape->z = z;
    tape->r = r;
    tape->cand = cand;
    tape->rh = std::move(rh);
  }
  return out;
}

std::pair<Matrix, Matrix> GruCell::step_backward(const StepTape& t, const Matrix& grad_h) {
  const Matrix dcand = grad_h.cwiseProduct(t.z);
  const Matrix dz = grad_h.cwiseProduct(t.cand - t.h_prev);
  Matrix dh = grad_h.cwiseProduct((1.0 - t.z.array()).matrix());

  const Matrix dac = dcand.cwiseProduct((1.0 - t.cand.array().square()).matrix());
  wh.grad.noalias() += dac * t.x.transpose();
  uh.grad.noalias() += dac * t.rh.transpose();
  bh.grad += dac.rowwise().sum();
  const Matrix drh = uh.value.transpose() * dac;
  const Matrix dr = drh.cwiseProduct(t.h_prev);
  dh += drh.cwiseProduct(t.r);

  const Matrix daz = dz.cwiseProduct((t.z.array() * (1.0 - t.z.array())).matrix());
  const Matrix dar = dr.cwiseProduct((t.r.array() * (1.0 - t.r.array())).matrix());
  wz.grad.noalias() += daz * t.x.transpose();
  uz.grad.noalias() += daz * t.h_prev.transpose();
  bz.grad += daz.rowwise().sum();
  wr.grad.noalias() += dar * t.x.transpose();
  ur.grad.noalias() += dar * t.h_prev.transpose();
  br.grad += dar.rowwise().sum();

  dh.noalias() += uz.value.transpose() * daz + ur.value.transpose() * dar;
  Matrix dx = wz.value.transpose() * daz + wr.value.transpose() * dar +
              wh.value.transpose() * dac;
  return {std::move(dx), std::move(dh)};
}

Matrix GruCell::run(const std::vector<Matrix>& xs, const Matrix& h0, SequenceTape* tape) const {
  if (tape) tape->steps.resize(xs.size());
  Matrix h = h0;
  for (std::size_t k = 0; k < xs.size(); ++k) h = step(xs[k], h, tape ? &tape->steps[k] : nullptr);
  return h;
}

std::vector<Matrix> GruCell::backward_sequence(const SequenceTape& tape, const Matrix& grad_last) {
  std::vector<Matrix> out(tape.steps.size() + 1);
  Matrix dh = grad_last;
  for (std::size_t k = tape.steps.size(); k-- > 0;) {
    auto [dx, dprev] = step_backward(tape.steps[k], dh);
    out[k] = std::move(dx);
    dh = std::move(dprev);
  }
  out.back() = std::move(dh);
  return out;
}

ParamList GruCell::params() { return {&wz, &uz, &bz, &wr, &ur, &br, &wh, &uh, &bh}; }

// ---------------------------------------------------------------- Adam

Adam::Adam(ParamList params, AdamConfig config) : params_(std::move(params)), config_(config) {
  for (const Tensor* p : params_) {
    m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
}

void Adam::step() {
  last_norm_ = grad_norm(params_);
  double scale = 1.0;
  if (config_.clip_norm > 0.0 && last_norm_ > config_.clip_norm) scale = config_.clip_norm / last_norm_;
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = *params_[k];
    if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols())
      throw std::invalid_argument("Adam::step: gradient shape mismatch for " + p.name);
    const auto g = (scale * p.grad.array()).eval();
    m_[k].array() = config_.beta1 * m_[k].array() + (1.0 - config_.beta1) * g;
    v_[k].array() = config_.beta2 * v_[k].array() + (1.0 - config_.beta2) * g.square();
    p.value.array() -= config_.lr * (m_[k].array() / c1) /
                       ((v_[k].array() / c2).sqrt() + config_.eps);
  }
}

// ---------------------------------------------------------------- target nets

namespace {
void check_pair(const Tensor& a, const Tensor& b) {
  if (a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols())
    throw std::invalid_argument("parameter shape mismatch: " + a.name + " vs " + b.name);
}
}  // namespace

void soft_update(const ParamList& target, const ConstParamList& online, double tau) {
  if (target.size() != online.size())
    throw std::invalid_argument("soft_update: parameter count mismatch");
  for (std::size_t k = 0; k < target.size(); ++k) {
    check_pair(*target[k], *online[k]);
    target[k]->value = tau * online[k]->value + (1.0 - tau) * target[k]->value;
  }
}

void hard_update(const ParamList& target, const ConstParamList& online) {
  if (target.size() != online.size())
    throw std::invalid_argument("hard_update: parameter count mismatch");
  for (std::size_t k = 0; k < target.size(); ++k) {
    check_pair(*target[k], *online[k]);
    target[k]->value = online[k]->value;
  }
}

// ---------------------------------------------------------------- checkpoints

namespace {

constexpr char kMagic[8] = {'R', 'B', 'N', 'N', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t get_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw std::runtime_error("checkpoint truncated");
  return v;
}

}  // namespace

void save_checkpoint(std::ostream& out, const ConstParamList& params) {
  out.write(kMagic, sizeof kMagic);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const Tensor* t : params) {
    put_u32(out, static_cast<std::uint32_t>(t->name.size()));
    out.write(t->name.data(), static_cast<std::streamsize>(t->name.size()));
    put_u32(out, static_cast<std::uint32_t>(t->value.rows()));
    put_u32(out, static_cast<std::uint32_t>(t->value.cols()));
  }
  for (const Tensor* t : params) {
    for (Eigen::Index r = 0; r < t->value.rows(); ++r)
      for (Eigen::Index c = 0; c < t->value.cols(); ++c) {
        const double v = t->value(r, c);
        out.write(reinterpret_cast<const char*>(&v), sizeof v);
      }
  }
  if (!out) throw std::runtime_error("checkpoint write failed");
}

void save_checkpoint(const std::string& path, const ConstParamList& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  save_checkpoint(out, params);
}

void load_checkpoint(std::istream& in, const ParamList& params) {
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw std::runtime_error("not a parameter checkpoint");
  if (get_u32(in) != kVersion) throw std::runtime_error("unsupported checkpoint version");
  if (get_u32(in) != params.size()) throw std::runtime_error("checkpoint tensor count mismatch");
  for (const Tensor* t : params) {
    const std::uint32_t len = get_u32(in);
    std::string name(len, '\0');
    in.read(name.data(), len);
    const std::uint32_t rows = get_u32(in);
    const std::uint32_t cols = get_u32(in);
    if (name != t->name || rows != t->value.rows() || cols != t->value.cols())
      throw std::runtime_error("checkpoint tensor mismatch at " + t->name);
  }
  for (Tensor* t : params) {
    for (Eigen::Index r = 0; r < t->value.rows(); ++r)
      for (Eigen::Index c = 0; c < t->value.cols(); ++c) {
        double v = 0.0;
        in.read(reinterpret_cast<char*>(&v), sizeof v);
        if (!in) throw std::runtime_error("checkpoint truncated");
        t->value(r, c) = v;
      }
  }
}

void load_checkpoint(const std::string& path, const ParamList& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  load_checkpoint(in, params);
}

}  // namespace rebal::nn
