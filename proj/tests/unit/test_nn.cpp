#include <cmath>
#include <functional>
#include <cstring>
#include <sstream>

#include <gtest/gtest.h>

#include "rebal/nn.hpp"

using namespace rebal;
using namespace rebal::nn;

namespace {

Matrix random_matrix(int rows, int cols, Rng& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = u(rng);
  return m;
}

double rel_error(double a, double b) {
  return std::abs(a - b) / std::max(1e-6, std::abs(a) + std::abs(b));
}

// Central differences of f with respect to every entry of `x`.
Matrix numeric_grad(Matrix& x, const std::function<double()>& f, double h = 1e-6) {
  Matrix g(x.rows(), x.cols());
  for (int i = 0; i < x.rows(); ++i) {
    for (int j = 0; j < x.cols(); ++j) {
      const double keep = x(i, j);
      x(i, j) = keep + h;
      const double up = f();
      x(i, j) = keep - h;
      const double down = f();
      x(i, j) = keep;
      g(i, j) = (up - down) / (2 * h);
    }
  }
  return g;
}

void expect_close(const Matrix& analytic, const Matrix& numeric, double tol) {
  ASSERT_EQ(analytic.rows(), numeric.rows());
  ASSERT_EQ(analytic.cols(), numeric.cols());
  for (int i = 0; i < analytic.rows(); ++i)
    for (int j = 0; j < analytic.cols(); ++j)
      EXPECT_LT(rel_error(analytic(i, j), numeric(i, j)), tol)
          << "entry (" << i << "," << j << ") " << analytic(i, j) << " vs " << numeric(i, j);
}

}  // namespace

TEST(Activation, DerivativesMatchDifferences) {
  Rng rng(3);
  const Matrix pre = random_matrix(4, 5, rng, 2.0);
  for (auto act : {Activation::kIdentity, Activation::kTanh, Activation::kSigmoid}) {
    const Matrix out = activate(act, pre);
    const Matrix d = activation_derivative(act, pre, out);
    Matrix x = pre;
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 5; ++j) {
        Matrix cell = x;
        auto f = [&] { return activate(act, cell)(i, j); };
        const Matrix g = numeric_grad(cell, f);
        EXPECT_NEAR(d(i, j), g(i, j), 1e-7);
      }
    }
  }
}

TEST(Dense, GradientsMatchFiniteDifferences) {
  Rng rng(11);
  Dense layer(5, 3, Activation::kTanh, rng, "d");
  Matrix x = random_matrix(5, 4, rng);
  const Matrix w = random_matrix(3, 4, rng);
  auto loss = [&] { return layer.forward(x).cwiseProduct(w).sum(); };

  Dense::Tape tape;
  layer.forward(x, &tape);
  layer.weight.zero_grad();
  layer.bias.zero_grad();
  const Matrix dx = layer.backward(tape, w);

  expect_close(dx, numeric_grad(x, loss), 1e-6);
  expect_close(layer.weight.grad, numeric_grad(layer.weight.value, loss), 1e-6);
  expect_close(layer.bias.grad, numeric_grad(layer.bias.value, loss), 1e-6);
}

TEST(Dense, BackwardAccumulates) {
  Rng rng(2);
  Dense layer(3, 2, Activation::kIdentity, rng, "d");
  const Matrix x = random_matrix(3, 2, rng);
  Dense::Tape tape;
  layer.forward(x, &tape);
  layer.weight.zero_grad();
  layer.backward(tape, Matrix::Ones(2, 2));
  const Matrix once = layer.weight.grad;
  layer.backward(tape, Matrix::Ones(2, 2));
  EXPECT_TRUE(layer.weight.grad.isApprox(2 * once));
}

TEST(Mlp, ShapesAndFiniteDifferences) {
  Rng rng(5);
  Mlp net({6, 8, 7, 2}, Activation::kRelu, Activation::kSigmoid, rng, "m");
  EXPECT_EQ(net.in(), 6);
  EXPECT_EQ(net.out(), 2);
  Matrix x = random_matrix(6, 3, rng);
  const Matrix w = random_matrix(2, 3, rng);
  auto loss = [&] { return net.forward(x).cwiseProduct(w).sum(); };
  Mlp::Tape tape;
  net.forward(x, &tape);
  zero_grads(net.params());
  const Matrix dx = net.backward(tape, w);
  expect_close(dx, numeric_grad(x, loss), 1e-5);
  for (Tensor* p : net.params()) expect_close(p->grad, numeric_grad(p->value, loss), 1e-5);
}

TEST(Gru, SequenceGradientsMatchFiniteDifferences) {
  Rng rng(7);
  GruCell cell(2, 4, rng, "g");
  std::vector<Matrix> xs;
  for (int k = 0; k < 5; ++k) xs.push_back(random_matrix(2, 3, rng));
  Matrix h0 = random_matrix(4, 3, rng, 0.5);
  const Matrix w = random_matrix(4, 3, rng);
  auto loss = [&] { return cell.run(xs, h0).cwiseProduct(w).sum(); };

  GruCell::SequenceTape tape;
  cell.run(xs, h0, &tape);
  zero_grads(cell.params());
  const auto grads = cell.backward_sequence(tape, w);
  ASSERT_EQ(grads.size(), xs.size() + 1);
  for (std::size_t k = 0; k < xs.size(); ++k) expect_close(grads[k], numeric_grad(xs[k], loss), 1e-5);
  expect_close(grads.back(), numeric_grad(h0, loss), 1e-5);
  for (Tensor* p : cell.params()) expect_close(p->grad, numeric_grad(p->value, loss), 1e-5);
}

TEST(Gru, ZeroUpdateGateKeepsState) {
  Rng rng(1);
  GruCell cell(1, 3, rng, "g");
  cell.wz.value.setZero();
  cell.uz.value.setZero();
  cell.bz.value.setConstant(-1e3);
  const Matrix h = random_matrix(3, 2, rng);
  EXPECT_TRUE(cell.step(random_matrix(1, 2, rng), h).isApprox(h, 1e-12));
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Tensor t("t", 1, 3);
  t.grad << 0.5, -2.0, 1e-3;
  Adam opt({&t}, {0.01, 0.9, 0.999, 1e-12, 0.0});
  opt.step();
  // With bias correction the first update is lr * sign(g).
  EXPECT_NEAR(t.value(0, 0), -0.01, 1e-9);
  EXPECT_NEAR(t.value(0, 1), 0.01, 1e-9);
  EXPECT_NEAR(t.value(0, 2), -0.01, 1e-6);
  EXPECT_EQ(opt.steps(), 1);
}

TEST(Adam, ClipsGlobalNorm) {
  Tensor a("a", 1, 1), b("b", 1, 1);
  a.grad(0, 0) = 30.0;
  b.grad(0, 0) = 40.0;
  Adam opt({&a, &b}, {0.1, 0.9, 0.999, 1e-8, 10.0});
  opt.step();
  EXPECT_NEAR(opt.last_grad_norm(), 50.0, 1e-12);
  // Clipping rescales but keeps the direction, so the first step is still lr * sign.
  EXPECT_NEAR(a.value(0, 0), -0.1, 1e-6);
}

TEST(Adam, MinimizesQuadratic) {
  Tensor t("t", 2, 1);
  t.value << 3.0, -4.0;
  Adam opt({&t}, {0.05, 0.9, 0.999, 1e-8, 10.0});
  for (int k = 0; k < 2000; ++k) {
    t.grad = 2.0 * t.value;
    opt.step();
  }
  EXPECT_LT(t.value.norm(), 1e-3);
}

TEST(TargetUpdate, SoftUpdateShrinksGapGeometrically) {
  Rng rng(4);
  Tensor online("w", 3, 4), target("w", 3, 4);
  online.value = random_matrix(3, 4, rng);
  target.value = random_matrix(3, 4, rng);
  const Matrix gap0 = target.value - online.value;
  const double tau = 0.001;
  const int k = 250;
  for (int s = 0; s < k; ++s) soft_update({&target}, {&online}, tau);
  const Matrix expected = gap0 * std::pow(1 - tau, k);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j)
      EXPECT_NEAR(target.value(i, j) - online.value(i, j), expected(i, j), 1e-12);
  hard_update({&target}, {&online});
  EXPECT_EQ(target.value, online.value);
}

TEST(Checkpoint, RoundTripsAndChecksShapes) {
  Rng rng(9);
  Mlp a({3, 4, 2}, Activation::kRelu, Activation::kIdentity, rng, "m");
  Mlp b({3, 4, 2}, Activation::kRelu, Activation::kIdentity, rng, "m");
  std::stringstream buf;
  save_checkpoint(buf, nn::as_const(a.params()));
  const std::string bytes = buf.str();
  EXPECT_EQ(bytes.substr(0, 8), "RBNNCKPT");
  load_checkpoint(buf, b.params());
  for (std::size_t k = 0; k < a.params().size(); ++k)
    EXPECT_EQ(a.params()[k]->value, b.params()[k]->value);

  Mlp wrong({3, 5, 2}, Activation::kRelu, Activation::kIdentity, rng, "m");
  std::stringstream again(bytes);
  EXPECT_THROW(load_checkpoint(again, wrong.params()), std::runtime_error);
}

TEST(Checkpoint, PayloadIsRowMajorLittleEndian) {
  Tensor t("x", 2, 2);
  t.value << 1.0, 2.0, 3.0, 4.0;
  std::stringstream buf;
  save_checkpoint(buf, {&t});
  const std::string bytes = buf.str();
  // magic 8 + version 4 + count 4 + name len 4 + "x" 1 + rows 4 + cols 4
  const std::size_t payload = 8 + 4 + 4 + 4 + 1 + 4 + 4;
  ASSERT_EQ(bytes.size(), payload + 4 * 8);
  double second = 0.0;
  std::memcpy(&second, bytes.data() + payload + 8, 8);
  EXPECT_EQ(second, 2.0);
}
