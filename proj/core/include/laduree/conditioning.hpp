#pragma once

#include "laduree/autograd.hpp"
#include "laduree/nn.hpp"

#include <cstdint>
#include <string>
#include <string_view>

namespace laduree {

enum class ConditioningKind : std::uint8_t { ICC = 0, CA = 1, CAG = 2, ALNZ = 3 };

std::string_view to_string(ConditioningKind kind);
ConditioningKind parse_conditioning_kind(std::string_view text);

struct ConditioningSpec {
  ConditioningKind kind = ConditioningKind::CAG;
  int hidden_size = 0;
  int num_heads = 1;
  double mlp_ratio = 4.0;

  void validate() const;
  /// Feed-forward hidden width, round(mlp_ratio * H).
  [[nodiscard]] int mlp_hidden() const;
};

/// Trainable parameters of an unconditioned pre-norm block: self-attention
/// plus feed-forward. Layer norms carry no affine terms.
std::int64_t base_block_param_count(const ConditioningSpec& spec);

/// Per-block parameters added by the conditioning pathway:
///   ICC 0, CA 4H^2 + 4H, CAG 4H^2 + 5H, ALNZ 6H^2 + 6H.
std::int64_t extra_param_count(const ConditioningSpec& spec);

/// Pre-norm transformer block with one of four condition injections.
///
///   ICC   condition prepended as an extra token; length grows by one.
///   CA    x += CrossAttn(LN(x), cond) between self-attention and MLP.
///   CAG   x += alpha * CrossAttn(LN(x), cond), alpha in R^H starts at 0.
///   ALNZ  cond -> SiLU -> Linear(H, 6H) gives shift/scale/gate for both
///         sublayers; the whole map starts at 0.
class TransformerBlock {
 public:
  TransformerBlock() = default;
  TransformerBlock(const ConditioningSpec& spec, Rng& rng);

  /// tokens: (N*len, H), cond: (N, H). Result has output_length(len) rows
  /// per sample.
  [[nodiscard]] Var forward(Tape& tape, const Var& tokens, int len, const Var& cond) const;

  /// The same block with its condition pathway removed: no prepended token
  /// (ICC), no cross-attention sublayer (CA, CAG), modulation computed from
  /// a zero condition (ALNZ).
  [[nodiscard]] Var forward_unconditioned(Tape& tape, const Var& tokens, int len) const;

  [[nodiscard]] int output_length(int len) const {
    return spec_.kind == ConditioningKind::ICC ? len + 1 : len;
  }

  void collect(const std::string& prefix, ParamList& out);

  [[nodiscard]] const ConditioningSpec& spec() const { return spec_; }
  /// CAG per-dimension gate (1, H).
  [[nodiscard]] Parameter& gate() { return gate_; }
  [[nodiscard]] Linear& modulation() { return modulation_; }

 private:
  [[nodiscard]] Var modulated_forward(Tape& tape, const Var& tokens, int len, const Var& cond) const;

  ConditioningSpec spec_;
  MultiHeadAttention self_attn_;
  MultiHeadAttention cross_attn_;
  FeedForward mlp_;
  Parameter gate_;
  Linear modulation_;
};

TransformerBlock make_block(const ConditioningSpec& spec, std::uint64_t init_seed = 0);

}  // namespace laduree
