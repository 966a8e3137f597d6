#include "laduree/nn.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace laduree {
namespace {

TEST(NnTest, XavierBoundsAndZeros) {
  Rng rng(1);
  const Parameter w = make_parameter(30, 50, Init::XavierUniform, rng);
  const double bound = std::sqrt(6.0 / 80.0);
  EXPECT_LE(w.value.cwiseAbs().maxCoeff(), bound);
  EXPECT_GT(w.value.cwiseAbs().maxCoeff(), 0.8 * bound);
  EXPECT_EQ(make_parameter(3, 4, Init::Zeros, rng).value, Matrix::Zero(3, 4));
}

TEST(NnTest, LinearForward) {
  Rng rng(2);
  Linear lin(3, 2, rng);
  lin.bias.value << 0.5, -1.0;
  Matrix x(2, 3);
  x << 1, 2, 3, 4, 5, 6;
  Tape tape(false);
  const Matrix y = lin.forward(tape, tape.constant(x)).value();
  const Matrix expected = (x * lin.weight.value).rowwise() + lin.bias.value.row(0);
  EXPECT_TRUE(y.isApprox(expected, 1e-14));
  EXPECT_EQ(lin.in_features(), 3);
  EXPECT_EQ(lin.out_features(), 2);
}

TEST(NnTest, ParameterCounts) {
  Rng rng(3);
  MultiHeadAttention self(MultiHeadAttention::Kind::Self, 12, 3, rng);
  MultiHeadAttention cross(MultiHeadAttention::Kind::Cross, 12, 3, rng);
  FeedForward ff(12, 48, rng);
  ParamList a, b, c;
  self.collect("s", a);
  cross.collect("c", b);
  ff.collect("f", c);
  EXPECT_EQ(count_parameters(a), MultiHeadAttention::param_count(12));
  EXPECT_EQ(count_parameters(b), MultiHeadAttention::param_count(12));
  EXPECT_EQ(count_parameters(c), FeedForward::param_count(12, 48));
  EXPECT_EQ(MultiHeadAttention::param_count(12), 4 * 144 + 48);
}

TEST(NnTest, CrossAttentionWithOneKeyIgnoresQueries) {
  Rng rng(4);
  MultiHeadAttention cross(MultiHeadAttention::Kind::Cross, 8, 2, rng);
  Matrix x1(3, 8), x2(3, 8), ctx(1, 8);
  for (Matrix* m : {&x1, &x2, &ctx}) {
    for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = rng.normal();
  }
  Tape tape(false);
  const Matrix a = cross.cross_attend(tape, tape.constant(x1), 3, tape.constant(ctx), 1).value();
  const Matrix b = cross.cross_attend(tape, tape.constant(x2), 3, tape.constant(ctx), 1).value();
  EXPECT_TRUE(a.isApprox(b, 1e-12));
  EXPECT_TRUE(a.row(0).isApprox(a.row(2), 1e-12));
}

TEST(NnTest, AdamFirstStepIsSignedLearningRate) {
  Parameter p{Matrix::Zero(1, 3)};
  Tape tape;
  Matrix target(1, 3);
  target << 1.0, -2.0, 0.0;
  const Var loss = ag::mse(tape.parameter(p), target);
  tape.backward(loss);
  ParamList params{{"p", &p}};
  Adam adam;
  adam.step(params, tape, 0.1);
  EXPECT_EQ(adam.steps(), 1);
  EXPECT_NEAR(p.value(0, 0), 0.1, 1e-6);
  EXPECT_NEAR(p.value(0, 1), -0.1, 1e-6);
  EXPECT_EQ(p.value(0, 2), 0.0);
}

TEST(NnTest, AdamMinimizesQuadratic) {
  Parameter p{Matrix::Constant(2, 2, 3.0)};
  const Matrix target = Matrix::Constant(2, 2, -1.0);
  ParamList params{{"p", &p}};
  Adam adam;
  for (int i = 0; i < 2000; ++i) {
    Tape tape;
    const Var loss = ag::mse(tape.parameter(p), target);
    tape.backward(loss);
    adam.step(params, tape, 0.01);
  }
  EXPECT_TRUE(p.value.isApprox(target, 1e-3));
}

TEST(NnTest, AdamSkipsParametersWithoutGradient) {
  Parameter used{Matrix::Zero(1, 1)}, unused{Matrix::Constant(1, 1, 5.0)};
  Tape tape;
  const Var loss = ag::mse(tape.parameter(used), Matrix::Ones(1, 1));
  tape.backward(loss);
  Adam adam;
  adam.step({{"used", &used}, {"unused", &unused}}, tape, 0.5);
  EXPECT_EQ(unused.value(0, 0), 5.0);
  EXPECT_NE(used.value(0, 0), 0.0);
}

}  // namespace
}  // namespace laduree
