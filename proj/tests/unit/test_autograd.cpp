#include "laduree/autograd.hpp"

#include "laduree/errors.hpp"
#include "laduree/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <vector>

namespace laduree {
namespace {

Matrix random_matrix(int rows, int cols, Rng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

using LossFn = std::function<Var(Tape&)>;

/// Compares tape gradients with central differences for every entry of
/// every parameter.
void expect_gradients_match(const LossFn& loss_fn, std::vector<Parameter*> params, double tol = 1e-4) {
  Tape tape;
  Var loss = loss_fn(tape);
  tape.backward(loss);
  for (Parameter* p : params) {
    const Matrix* g = tape.gradient(*p);
    ASSERT_NE(g, nullptr);
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      const double saved = p->value.data()[i];
      const double h = 1e-6 * std::max(1.0, std::abs(saved));
      p->value.data()[i] = saved + h;
      Tape tp(false);
      const double up = loss_fn(tp).value()(0, 0);
      p->value.data()[i] = saved - h;
      Tape tm(false);
      const double down = loss_fn(tm).value()(0, 0);
      p->value.data()[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double analytic = g->data()[i];
      EXPECT_LE(std::abs(analytic - numeric), tol * (std::abs(analytic) + std::abs(numeric)) + 1e-8)
          << "entry " << i << " analytic " << analytic << " numeric " << numeric;
    }
  }
}

class AutogradTest : public ::testing::Test {
 protected:
  Rng rng{2024};
};

TEST_F(AutogradTest, Matmul) {
  Parameter a{random_matrix(3, 4, rng)}, b{random_matrix(4, 2, rng)};
  const Matrix target = random_matrix(3, 2, rng);
  expect_gradients_match([&](Tape& t) { return ag::mse(ag::matmul(t.parameter(a), t.parameter(b)), target); },
                         {&a, &b});
}

TEST_F(AutogradTest, LinearWithBias) {
  Parameter x{random_matrix(5, 3, rng)}, w{random_matrix(3, 4, rng)}, b{random_matrix(1, 4, rng)};
  const Matrix target = random_matrix(5, 4, rng);
  expect_gradients_match(
      [&](Tape& t) { return ag::mse(ag::linear(t.parameter(x), t.parameter(w), t.parameter(b)), target); },
      {&x, &w, &b});
}

TEST_F(AutogradTest, ElementwiseOps) {
  Parameter a{random_matrix(3, 3, rng)}, b{random_matrix(3, 3, rng)};
  const Matrix target = random_matrix(3, 3, rng);
  expect_gradients_match(
      [&](Tape& t) {
        Var x = t.parameter(a), y = t.parameter(b);
        Var z = ag::add(ag::mul(x, y), ag::sub(ag::scale(x, 0.7), y));
        return ag::mse(ag::add_constant(z, 0.3), target);
      },
      {&a, &b});
}

TEST_F(AutogradTest, RowBroadcasts) {
  Parameter x{random_matrix(4, 3, rng)}, r{random_matrix(1, 3, rng)}, s{random_matrix(1, 3, rng)};
  const Matrix target = random_matrix(4, 3, rng);
  expect_gradients_match(
      [&](Tape& t) {
        return ag::mse(ag::add_row(ag::mul_row(t.parameter(x), t.parameter(s)), t.parameter(r)), target);
      },
      {&x, &r, &s});
}

TEST_F(AutogradTest, Activations) {
  Parameter x{random_matrix(4, 5, rng, 2.0)};
  const Matrix target = random_matrix(4, 5, rng);
  expect_gradients_match([&](Tape& t) { return ag::mse(ag::gelu(t.parameter(x)), target); }, {&x});
  expect_gradients_match([&](Tape& t) { return ag::mse(ag::silu(t.parameter(x)), target); }, {&x});
}

TEST_F(AutogradTest, GeluMatchesTanhFormula) {
  Tape t(false);
  Matrix m(1, 3);
  m << -1.5, 0.0, 2.0;
  const Matrix out = ag::gelu(t.constant(m)).value();
  for (int i = 0; i < 3; ++i) {
    const double x = m(0, i);
    const double ref = 0.5 * x * (1 + std::tanh(std::sqrt(2 / M_PI) * (x + 0.044715 * x * x * x)));
    EXPECT_NEAR(out(0, i), ref, 1e-15);
  }
}

TEST_F(AutogradTest, LayerNorm) {
  Parameter x{random_matrix(3, 6, rng, 3.0)};
  const Matrix target = random_matrix(3, 6, rng);
  expect_gradients_match([&](Tape& t) { return ag::mse(ag::layer_norm(t.parameter(x)), target); }, {&x});
  Tape t(false);
  const Matrix y = ag::layer_norm(t.constant(x.value)).value();
  for (int r = 0; r < 3; ++r) {
    EXPECT_NEAR(y.row(r).mean(), 0.0, 1e-12);
    EXPECT_NEAR(y.row(r).squaredNorm() / 6.0, 1.0, 1e-5);
  }
}

TEST_F(AutogradTest, AttentionSelfAndCross) {
  const int heads = 2, len = 3, kv = 2, batch = 2, dim = 4;
  Parameter q{random_matrix(batch * len, dim, rng)}, k{random_matrix(batch * kv, dim, rng)},
      v{random_matrix(batch * kv, dim, rng)};
  const Matrix target = random_matrix(batch * len, dim, rng);
  expect_gradients_match(
      [&](Tape& t) {
        return ag::mse(ag::attention(t.parameter(q), t.parameter(k), t.parameter(v), heads, len, kv), target);
      },
      {&q, &k, &v});
}

TEST_F(AutogradTest, AttentionSegmentsAreIndependent) {
  const int len = 3, dim = 4;
  Matrix q = random_matrix(2 * len, dim, rng), k = random_matrix(2 * len, dim, rng), v = random_matrix(2 * len, dim, rng);
  Tape t(false);
  const Matrix both = ag::attention(t.constant(q), t.constant(k), t.constant(v), 2, len, len).value();
  Matrix q2 = q, k2 = k, v2 = v;
  q2.bottomRows(len).setRandom();
  k2.bottomRows(len).setRandom();
  v2.bottomRows(len).setRandom();
  const Matrix changed = ag::attention(t.constant(q2), t.constant(k2), t.constant(v2), 2, len, len).value();
  EXPECT_EQ(both.topRows(len), changed.topRows(len));
}

TEST_F(AutogradTest, SingleKeyAttentionReturnsValue) {
  Matrix q = random_matrix(3, 4, rng), k = random_matrix(1, 4, rng), v = random_matrix(1, 4, rng);
  Tape t(false);
  const Matrix out = ag::attention(t.constant(q), t.constant(k), t.constant(v), 2, 3, 1).value();
  for (int r = 0; r < 3; ++r) EXPECT_TRUE(out.row(r).isApprox(v.row(0), 1e-14));
}

TEST_F(AutogradTest, RowReshapes) {
  Parameter x{random_matrix(2, 3, rng)}, seq{random_matrix(2 * 4, 3, rng)};
  const Matrix target_rep = random_matrix(2 * 4, 3, rng);
  expect_gradients_match([&](Tape& t) { return ag::mse(ag::repeat_rows(t.parameter(x), 4), target_rep); }, {&x});
  const Matrix target_pre = random_matrix(2 * 5, 3, rng);
  expect_gradients_match(
      [&](Tape& t) { return ag::mse(ag::prepend_rows(t.parameter(seq), t.parameter(x), 4), target_pre); },
      {&x, &seq});
  const Matrix target_drop = random_matrix(2 * 3, 3, rng);
  expect_gradients_match([&](Tape& t) { return ag::mse(ag::drop_first_rows(t.parameter(seq), 4), target_drop); },
                         {&seq});
  const Matrix target_slice = random_matrix(8, 2, rng);
  expect_gradients_match([&](Tape& t) { return ag::mse(ag::slice_cols(t.parameter(seq), 1, 2), target_slice); },
                         {&seq});
}

TEST_F(AutogradTest, PrependThenDropIsIdentity) {
  Matrix seq = random_matrix(6, 2, rng), tok = random_matrix(2, 2, rng);
  Tape t(false);
  const Matrix out = ag::drop_first_rows(ag::prepend_rows(t.constant(seq), t.constant(tok), 3), 4).value();
  EXPECT_EQ(out, seq);
}

TEST_F(AutogradTest, GatherRows) {
  Parameter table{random_matrix(5, 3, rng)};
  const std::vector<std::int64_t> idx{4, 0, 4};
  const Matrix target = random_matrix(3, 3, rng);
  expect_gradients_match([&](Tape& t) { return ag::mse(ag::gather_rows(t.parameter(table), idx), target); },
                         {&table});
}

TEST_F(AutogradTest, ParameterNodeIsShared) {
  Parameter p{random_matrix(2, 2, rng)};
  Tape t;
  EXPECT_EQ(t.parameter(p).id(), t.parameter(p).id());
}

TEST_F(AutogradTest, UnusedParameterHasNoGradient) {
  Parameter used{random_matrix(2, 2, rng)}, unused{random_matrix(2, 2, rng)};
  Tape t;
  (void)t.parameter(unused);
  Var loss = ag::mse(t.parameter(used), Matrix::Zero(2, 2));
  t.backward(loss);
  EXPECT_NE(t.gradient(used), nullptr);
  EXPECT_EQ(t.gradient(unused), nullptr);
}

TEST_F(AutogradTest, MseValue) {
  Tape t(false);
  Matrix a(1, 2);
  a << 1.0, 3.0;
  Matrix b(1, 2);
  b << 0.0, 1.0;
  EXPECT_DOUBLE_EQ(ag::mse(t.constant(a), b).value()(0, 0), 2.5);
}

}  // namespace
}  // namespace laduree
