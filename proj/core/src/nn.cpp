#include "laduree/nn.hpp"

#include "laduree/errors.hpp"

#include <cmath>

namespace laduree {

Parameter make_parameter(int rows, int cols, Init init, Rng& rng) {
  Parameter p{Matrix::Zero(rows, cols)};
  if (init == Init::XavierUniform) {
    const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      p.value.data()[i] = (2.0 * rng.uniform() - 1.0) * bound;
    }
  }
  return p;
}

Linear::Linear(int in, int out, Rng& rng, Init init)
    : weight(make_parameter(in, out, init, rng)), bias{Matrix::Zero(1, out)} {}

Var Linear::forward(Tape& tape, const Var& x) const {
  return ag::linear(x, tape.parameter(weight), tape.parameter(bias));
}

void Linear::collect(const std::string& prefix, ParamList& out) {
  out.emplace_back(prefix + ".weight", &weight);
  out.emplace_back(prefix + ".bias", &bias);
}

MultiHeadAttention::MultiHeadAttention(Kind kind, int hidden, int heads, Rng& rng)
    : kind_(kind), hidden_(hidden), heads_(heads) {
  if (heads <= 0 || hidden % heads != 0) {
    throw ValidationError("hidden size " + std::to_string(hidden) +
                          " is not divisible by num_heads " + std::to_string(heads));
  }
  if (kind == Kind::Self) {
    qkv_ = Linear(hidden, 3 * hidden, rng);
  } else {
    q_ = Linear(hidden, hidden, rng);
    kv_ = Linear(hidden, 2 * hidden, rng);
  }
  out_ = Linear(hidden, hidden, rng);
}

Var MultiHeadAttention::self_attend(Tape& tape, const Var& x, int len) const {
  const Var qkv = qkv_.forward(tape, x);
  const Var q = ag::slice_cols(qkv, 0, hidden_);
  const Var k = ag::slice_cols(qkv, hidden_, hidden_);
  const Var v = ag::slice_cols(qkv, 2 * hidden_, hidden_);
  return out_.forward(tape, ag::attention(q, k, v, heads_, len, len));
}

Var MultiHeadAttention::cross_attend(Tape& tape, const Var& x, int len, const Var& context,
                                     int ctx_len) const {
  const Var q = q_.forward(tape, x);
  const Var kv = kv_.forward(tape, context);
  const Var k = ag::slice_cols(kv, 0, hidden_);
  const Var v = ag::slice_cols(kv, hidden_, hidden_);
  return out_.forward(tape, ag::attention(q, k, v, heads_, len, ctx_len));
}

void MultiHeadAttention::collect(const std::string& prefix, ParamList& out) {
  if (kind_ == Kind::Self) {
    qkv_.collect(prefix + ".qkv", out);
  } else {
    q_.collect(prefix + ".q", out);
    kv_.collect(prefix + ".kv", out);
  }
  out_.collect(prefix + ".out", out);
}

FeedForward::FeedForward(int hidden, int mlp_hidden, Rng& rng)
    : fc1_(hidden, mlp_hidden, rng), fc2_(mlp_hidden, hidden, rng) {}

Var FeedForward::forward(Tape& tape, const Var& x) const {
  return fc2_.forward(tape, ag::gelu(fc1_.forward(tape, x)));
}

void FeedForward::collect(const std::string& prefix, ParamList& out) {
  fc1_.collect(prefix + ".fc1", out);
  fc2_.collect(prefix + ".fc2", out);
}

std::int64_t count_parameters(const ParamList& params) {
  std::int64_t total = 0;
  for (const auto& [name, p] : params) total += p->numel();
  return total;
}

void Adam::step(const ParamList& params, const Tape& tape, double lr) {
  ++steps_;
  const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(steps_));
  for (const auto& [name, p] : params) {
    const Matrix* g = tape.gradient(*p);
    if (g == nullptr) continue;
    auto [it, fresh] = state_.try_emplace(name);
    Moments& s = it->second;
    if (fresh) {
      s.m = Matrix::Zero(g->rows(), g->cols());
      s.v = Matrix::Zero(g->rows(), g->cols());
    }
    s.m = options_.beta1 * s.m + (1.0 - options_.beta1) * *g;
    s.v = options_.beta2 * s.v + (1.0 - options_.beta2) * g->cwiseProduct(*g);
    p->value.array() -= lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + options_.eps);
  }
}

}  // namespace laduree
