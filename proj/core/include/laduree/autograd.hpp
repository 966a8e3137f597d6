#pragma once

#include "laduree/tensor.hpp"

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace laduree {

/// A trainable 2-D tensor. Vectors are stored as 1 x n rows.
struct Parameter {
  Matrix value;

  [[nodiscard]] std::int64_t numel() const { return value.size(); }
};

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while the
/// tape lives.
class Var {
 public:
  Var() = default;

  [[nodiscard]] const Matrix& value() const;
  [[nodiscard]] Eigen::Index rows() const { return value().rows(); }
  [[nodiscard]] Eigen::Index cols() const { return value().cols(); }
  [[nodiscard]] Tape* tape() const { return tape_; }
  [[nodiscard]] std::size_t id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode automatic differentiation over dense row-major matrices.
///
/// Every op appends a node holding its value and a closure that pushes the
/// node's gradient into its inputs. backward() walks the nodes in reverse
/// creation order. A tape built with record = false evaluates values only.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);

  /// Leaf bound to a parameter; repeated calls return the same node.
  Var parameter(const Parameter& p);

  /// Seeds d(loss)/d(loss) = 1 for a 1x1 loss and back-propagates.
  void backward(const Var& loss);

  /// Gradient accumulated for a parameter, or nullptr when it did not
  /// influence the loss.
  [[nodiscard]] const Matrix* gradient(const Parameter& p) const;

  [[nodiscard]] bool recording() const { return record_; }
  [[nodiscard]] std::size_t size() const { return nodes_.size(); }

  // Op-author interface.
  Var push(Matrix value, std::initializer_list<Var> inputs, BackwardFn fn);
  [[nodiscard]] const Matrix& value_of(std::size_t id) const { return nodes_[id].value; }
  [[nodiscard]] const Matrix& grad_of(std::size_t id) const { return nodes_[id].grad; }
  [[nodiscard]] bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  /// Returns the gradient buffer of an input, zero-initialized on first use.
  Matrix& grad_buffer(std::size_t id);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  bool record_;
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> parameter_nodes_;
};

namespace ag {

Var matmul(const Var& a, const Var& b);
/// x W + b with b broadcast across rows.
Var linear(const Var& x, const Var& weight, const Var& bias);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var add_constant(const Var& a, double c);
/// x + row, row (1 x C) broadcast over x's rows.
Var add_row(const Var& x, const Var& row);
/// x * row elementwise, row (1 x C) broadcast over x's rows.
Var mul_row(const Var& x, const Var& row);

Var gelu(const Var& x);  // tanh approximation
Var silu(const Var& x);

/// Per-row normalization to zero mean, unit variance; no affine terms.
Var layer_norm(const Var& x, double eps = 1e-6);

/// Multi-head scaled dot-product attention over a batch of independent
/// sequences. q: (N*q_len, D); k, v: (N*kv_len, D); D divisible by heads.
Var attention(const Var& q, const Var& k, const Var& v, int heads, int q_len, int kv_len);

/// Repeats row n of x (N x C) `times` times: result (N*times x C).
Var repeat_rows(const Var& x, int times);

/// Inserts row n of token (N x C) in front of each length-len segment of
/// x (N*len x C): result (N*(len+1) x C).
Var prepend_rows(const Var& x, const Var& token, int len);

/// Removes the first row of each length-len segment: (N*(len-1) x C).
Var drop_first_rows(const Var& x, int len);

Var slice_cols(const Var& x, Eigen::Index start, Eigen::Index count);

/// Rows of table selected by indices (bounds-checked by the caller).
Var gather_rows(const Var& table, std::span<const std::int64_t> indices);

/// mean((a - target)^2) as a 1x1 node.
Var mse(const Var& a, const Matrix& target);

}  // namespace ag
}  // namespace laduree
