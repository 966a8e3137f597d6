#pragma once

#include "laduree/autograd.hpp"
#include "laduree/rng.hpp"

#include <map>
#include <string>
#include <utility>
#include <vector>

namespace laduree {

/// Fully qualified parameter names paired with the owned storage.
using ParamList = std::vector<std::pair<std::string, Parameter*>>;

enum class Init { XavierUniform, Zeros };

Parameter make_parameter(int rows, int cols, Init init, Rng& rng);

struct Linear {
  Parameter weight;  // (in, out)
  Parameter bias;    // (1, out)

  Linear() = default;
  Linear(int in, int out, Rng& rng, Init init = Init::XavierUniform);

  [[nodiscard]] Var forward(Tape& tape, const Var& x) const;
  void collect(const std::string& prefix, ParamList& out);
  [[nodiscard]] int in_features() const { return static_cast<int>(weight.value.rows()); }
  [[nodiscard]] int out_features() const { return static_cast<int>(weight.value.cols()); }

  static std::int64_t param_count(std::int64_t in, std::int64_t out) { return in * out + out; }
};

/// Pre-projected multi-head attention. Self-attention uses one fused
/// (H -> 3H) projection; cross-attention projects queries (H -> H) and
/// keys/values (H -> 2H) separately. Both cost 4H^2 + 4H parameters.
class MultiHeadAttention {
 public:
  enum class Kind { Self, Cross };

  MultiHeadAttention() = default;
  MultiHeadAttention(Kind kind, int hidden, int heads, Rng& rng);

  /// x: (N*len, H). Self-attention over each segment.
  [[nodiscard]] Var self_attend(Tape& tape, const Var& x, int len) const;
  /// Queries from x (N*len, H); keys/values from context (N*ctx_len, H).
  [[nodiscard]] Var cross_attend(Tape& tape, const Var& x, int len, const Var& context,
                                 int ctx_len) const;

  void collect(const std::string& prefix, ParamList& out);

  static std::int64_t param_count(std::int64_t hidden) { return 4 * hidden * hidden + 4 * hidden; }

 private:
  Kind kind_ = Kind::Self;
  int hidden_ = 0;
  int heads_ = 1;
  Linear qkv_;  // self: (H, 3H)
  Linear q_;    // cross: (H, H)
  Linear kv_;   // cross: (H, 2H)
  Linear out_;
};

/// Linear -> GELU -> Linear with hidden width mlp_hidden.
class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(int hidden, int mlp_hidden, Rng& rng);

  [[nodiscard]] Var forward(Tape& tape, const Var& x) const;
  void collect(const std::string& prefix, ParamList& out);

  static std::int64_t param_count(std::int64_t hidden, std::int64_t mlp_hidden) {
    return Linear::param_count(hidden, mlp_hidden) + Linear::param_count(mlp_hidden, hidden);
  }

 private:
  Linear fc1_;
  Linear fc2_;
};

std::int64_t count_parameters(const ParamList& params);

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moments are keyed by parameter name;
/// parameters without a gradient on the tape are left untouched.
class Adam {
 public:
  explicit Adam(AdamOptions options = {}) : options_(options) {}

  void step(const ParamList& params, const Tape& tape, double lr);
  [[nodiscard]] std::int64_t steps() const { return steps_; }

 private:
  struct Moments {
    Matrix m;
    Matrix v;
  };
  AdamOptions options_;
  std::int64_t steps_ = 0;
  std::map<std::string, Moments> state_;
};

}  // namespace laduree
