#include "laduree/conditioning.hpp"

#include "laduree/errors.hpp"

#include <cmath>

namespace laduree {

std::string_view to_string(ConditioningKind kind) {
  switch (kind) {
    case ConditioningKind::ICC: return "ICC";
    case ConditioningKind::CA: return "CA";
    case ConditioningKind::CAG: return "CAG";
    case ConditioningKind::ALNZ: return "ALNZ";
  }
  return "?";
}

ConditioningKind parse_conditioning_kind(std::string_view text) {
  for (auto kind : {ConditioningKind::ICC, ConditioningKind::CA, ConditioningKind::CAG,
                    ConditioningKind::ALNZ}) {
    if (text == to_string(kind)) return kind;
  }
  throw ValidationError("unknown conditioning kind '" + std::string(text) + "' (ICC|CA|CAG|ALNZ)");
}

void ConditioningSpec::validate() const {
  if (hidden_size <= 0) throw ValidationError("hidden_size must be positive");
  if (num_heads <= 0 || hidden_size % num_heads != 0) {
    throw ValidationError("hidden size " + std::to_string(hidden_size) +
                          " is not divisible by num_heads " + std::to_string(num_heads));
  }
  if (!(mlp_ratio > 0.0) || mlp_hidden() < 1) throw ValidationError("mlp_ratio must be positive");
}

int ConditioningSpec::mlp_hidden() const {
  return static_cast<int>(std::lround(mlp_ratio * hidden_size));
}

std::int64_t base_block_param_count(const ConditioningSpec& spec) {
  return MultiHeadAttention::param_count(spec.hidden_size) +
         FeedForward::param_count(spec.hidden_size, spec.mlp_hidden());
}

std::int64_t extra_param_count(const ConditioningSpec& spec) {
  const std::int64_t h = spec.hidden_size;
  switch (spec.kind) {
    case ConditioningKind::ICC: return 0;
    case ConditioningKind::CA: return 4 * h * h + 4 * h;
    case ConditioningKind::CAG: return 4 * h * h + 5 * h;
    case ConditioningKind::ALNZ: return 6 * h * h + 6 * h;
  }
  return 0;
}

TransformerBlock::TransformerBlock(const ConditioningSpec& spec, Rng& rng) : spec_(spec) {
  spec_.validate();
  const int h = spec_.hidden_size;
  self_attn_ = MultiHeadAttention(MultiHeadAttention::Kind::Self, h, spec_.num_heads, rng);
  if (spec_.kind == ConditioningKind::CA || spec_.kind == ConditioningKind::CAG) {
    cross_attn_ = MultiHeadAttention(MultiHeadAttention::Kind::Cross, h, spec_.num_heads, rng);
  }
  mlp_ = FeedForward(h, spec_.mlp_hidden(), rng);
  if (spec_.kind == ConditioningKind::CAG) gate_.value = Matrix::Zero(1, h);
  if (spec_.kind == ConditioningKind::ALNZ) modulation_ = Linear(h, 6 * h, rng, Init::Zeros);
}

Var TransformerBlock::modulated_forward(Tape& tape, const Var& tokens, int len,
                                        const Var& cond) const {
  const int h = spec_.hidden_size;
  const Var mod = modulation_.forward(tape, ag::silu(cond));
  auto chunk = [&](int i) { return ag::repeat_rows(ag::slice_cols(mod, i * h, h), len); };
  const Var shift1 = chunk(0), scale1 = chunk(1), gate1 = chunk(2);
  const Var shift2 = chunk(3), scale2 = chunk(4), gate2 = chunk(5);

  Var x = tokens;
  Var hn = ag::add(ag::mul(ag::layer_norm(x), ag::add_constant(scale1, 1.0)), shift1);
  x = ag::add(x, ag::mul(gate1, self_attn_.self_attend(tape, hn, len)));
  hn = ag::add(ag::mul(ag::layer_norm(x), ag::add_constant(scale2, 1.0)), shift2);
  return ag::add(x, ag::mul(gate2, mlp_.forward(tape, hn)));
}

Var TransformerBlock::forward(Tape& tape, const Var& tokens, int len, const Var& cond) const {
  if (tokens.cols() != spec_.hidden_size || cond.cols() != spec_.hidden_size ||
      tokens.rows() != cond.rows() * len) {
    throw ValidationError("block input shape mismatch");
  }
  switch (spec_.kind) {
    case ConditioningKind::ALNZ:
      return modulated_forward(tape, tokens, len, cond);
    case ConditioningKind::ICC: {
      Var x = ag::prepend_rows(tokens, cond, len);
      x = ag::add(x, self_attn_.self_attend(tape, ag::layer_norm(x), len + 1));
      return ag::add(x, mlp_.forward(tape, ag::layer_norm(x)));
    }
    case ConditioningKind::CA:
    case ConditioningKind::CAG: {
      Var x = ag::add(tokens, self_attn_.self_attend(tape, ag::layer_norm(tokens), len));
      Var injected = cross_attn_.cross_attend(tape, ag::layer_norm(x), len, cond, 1);
      if (spec_.kind == ConditioningKind::CAG) injected = ag::mul_row(injected, tape.parameter(gate_));
      x = ag::add(x, injected);
      return ag::add(x, mlp_.forward(tape, ag::layer_norm(x)));
    }
  }
  throw ValidationError("unhandled conditioning kind");
}

Var TransformerBlock::forward_unconditioned(Tape& tape, const Var& tokens, int len) const {
  if (spec_.kind == ConditioningKind::ALNZ) {
    const Var zero = tape.constant(Matrix::Zero(tokens.rows() / len, spec_.hidden_size));
    return modulated_forward(tape, tokens, len, zero);
  }
  Var x = ag::add(tokens, self_attn_.self_attend(tape, ag::layer_norm(tokens), len));
  return ag::add(x, mlp_.forward(tape, ag::layer_norm(x)));
}

void TransformerBlock::collect(const std::string& prefix, ParamList& out) {
  self_attn_.collect(prefix + ".attn", out);
  if (spec_.kind == ConditioningKind::CA || spec_.kind == ConditioningKind::CAG) {
    cross_attn_.collect(prefix + ".cross", out);
  }
  if (spec_.kind == ConditioningKind::CAG) out.emplace_back(prefix + ".gate", &gate_);
  if (spec_.kind == ConditioningKind::ALNZ) modulation_.collect(prefix + ".modulation", out);
  mlp_.collect(prefix + ".mlp", out);
}

TransformerBlock make_block(const ConditioningSpec& spec, std::uint64_t init_seed) {
  spec.validate();
  Rng rng(init_seed);
  return TransformerBlock(spec, rng);
}

}  // namespace laduree
