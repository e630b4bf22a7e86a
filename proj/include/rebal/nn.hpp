#pragma once

// Small hand-differentiated networks. Batches are column-major: one sample per
// column. Forward passes never mutate a module; backward passes accumulate
// into Tensor::grad.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "rebal/core.hpp"

namespace rebal::nn {

using Matrix = Eigen::MatrixXd;

struct Tensor {
  std::string name;
  Matrix value;
  Matrix grad;

  Tensor() = default;
  Tensor(std::string name_, int rows, int cols)
      : name(std::move(name_)), value(Matrix::Zero(rows, cols)), grad(Matrix::Zero(rows, cols)) {}

  void zero_grad() { grad.setZero(); }
};

using ParamList = std::vector<Tensor*>;
using ConstParamList = std::vector<const Tensor*>;

void zero_grads(const ParamList& params);
double grad_norm(const ParamList& params);
ConstParamList as_const(const ParamList& params);

enum class Activation { kIdentity, kRelu, kTanh, kSigmoid };

Matrix activate(Activation act, const Matrix& pre);
/// Elementwise d(output)/d(pre), given both.
Matrix activation_derivative(Activation act, const Matrix& pre, const Matrix& out);

/// uniform(-1/sqrt(fan_in), +1/sqrt(fan_in))
void init_uniform_fan_in(Tensor& t, int fan_in, Rng& rng);

class Dense {
 public:
  struct Tape {
    Matrix input;
    Matrix pre;
    Matrix output;
  };

  Dense() = default;
  Dense(int in, int out, Activation act, Rng& rng, const std::string& name);

  int in() const { return static_cast<int>(weight.value.cols()); }
  int out() const { return static_cast<int>(weight.value.rows()); }

  Matrix forward(const Matrix& x, Tape* tape = nullptr) const;
  /// Accumulates parameter gradients and returns d(loss)/d(input).
  Matrix backward(const Tape& tape, const Matrix& grad_out);
  /// Input gradient only.
  Matrix backward_input(const Tape& tape, const Matrix& grad_out) const;

  ParamList params() { return {&weight, &bias}; }

  Tensor weight;
  Tensor bias;
  Activation activation = Activation::kIdentity;

 private:
  Matrix pre_grad(const Tape& tape, const Matrix& grad_out) const;
};

/// Stack of dense layers.
class Mlp {
 public:
  struct Tape {
    std::vector<Dense::Tape> layers;
  };

  Mlp() = default;
  /// sizes = {in, hidden..., out}; hidden layers use `hidden_act`. A positive
  /// `out_init` draws the last layer from U(-out_init, out_init) instead.
  Mlp(const std::vector<int>& sizes, Activation hidden_act, Activation out_act, Rng& rng,
      const std::string& name, double out_init = 0.0);

  int in() const { return layers.front().in(); }
  int out() const { return layers.back().out(); }

  Matrix forward(const Matrix& x, Tape* tape = nullptr) const;
  Matrix backward(const Tape& tape, const Matrix& grad_out);
  Matrix backward_input(const Tape& tape, const Matrix& grad_out) const;
  ParamList params();

  std::vector<Dense> layers;
};

/// Gated recurrent unit:
///   z = sigmoid(Wz x + Uz h + bz)
///   r = sigmoid(Wr x + Ur h + br)
///   c = tanh(Wh x + Uh (r .* h) + bh)
///   h' = (1 - z) .* h + z .* c
class GruCell {
 public:
  struct StepTape {
    Matrix x;
    Matrix h_prev;
    Matrix z;
    Matrix r;
    Matrix cand;
    Matrix rh;
  };
  struct SequenceTape {
    std::vector<StepTape> steps;
  };

  GruCell() = default;
  GruCell(int input, int hidden, Rng& rng, const std::string& name);

  int input_size() const { return static_cast<int>(wz.value.cols()); }
  int hidden_size() const { return static_cast<int>(wz.value.rows()); }

  Matrix step(const Matrix& x, const Matrix& h, StepTape* tape = nullptr) const;
  /// Returns {d/dx, d/dh_prev}; accumulates parameter gradients.
  std::pair<Matrix, Matrix> step_backward(const StepTape& tape, const Matrix& grad_h);

  /// Runs the cell over xs[0..k-1] from h0 and returns the last hidden state.
  Matrix run(const std::vector<Matrix>& xs, const Matrix& h0, SequenceTape* tape = nullptr) const;
  /// Backpropagation through time from d(loss)/d(last hidden). Returns the
  /// input gradients per step followed by d/dh0 as the final element.
  std::vector<Matrix> backward_sequence(const SequenceTape& tape, const Matrix& grad_last);

  ParamList params();

  Tensor wz, uz, bz;
  Tensor wr, ur, br;
  Tensor wh, uh, bh;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Global gradient-norm clip applied before each step; <= 0 disables.
  double clip_norm = 10.0;
};

class Adam {
 public:
  Adam() = default;
  Adam(ParamList params, AdamConfig config);

  /// One update from the accumulated gradients. Gradients are left intact.
  void step();

  const AdamConfig& config() const { return config_; }
  std::int64_t steps() const { return t_; }
  double last_grad_norm() const { return last_norm_; }

 private:
  ParamList params_;
  AdamConfig config_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  std::int64_t t_ = 0;
  double last_norm_ = 0.0;
};

/// target <- tau * online + (1 - tau) * target, elementwise.
void soft_update(const ParamList& target, const ConstParamList& online, double tau);
/// target <- online
void hard_update(const ParamList& target, const ConstParamList& online);

/// Binary checkpoint: "RBNNCKPT", u32 version, u32 tensor count, then per
/// tensor (u32 name length, name bytes, u32 rows, u32 cols), then every tensor
/// value in row-major float64. All integers and floats little-endian.
void save_checkpoint(std::ostream& out, const ConstParamList& params);
void save_checkpoint(const std::string& path, const ConstParamList& params);
/// Names and shapes must match; throws std::runtime_error otherwise.
void load_checkpoint(std::istream& in, const ParamList& params);
void load_checkpoint(const std::string& path, const ParamList& params);

}  // namespace rebal::nn
