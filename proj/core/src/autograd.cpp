#include "laduree/autograd.hpp"

#include "laduree/errors.hpp"

#include <cmath>
#include <memory>
#include <numbers>

namespace laduree {

const Matrix& Var::value() const { return tape_->value_of(id_); }

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix(), false, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(const Parameter& p) {
  if (auto it = parameter_nodes_.find(&p); it != parameter_nodes_.end()) {
    return Var(this, it->second);
  }
  nodes_.push_back(Node{p.value, Matrix(), record_, nullptr});
  parameter_nodes_.emplace(&p, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

Var Tape::push(Matrix value, std::initializer_list<Var> inputs, BackwardFn fn) {
  bool needs = false;
  if (record_) {
    for (const Var& in : inputs) needs = needs || nodes_[in.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), Matrix(), needs, needs ? std::move(fn) : nullptr});
  return Var(this, nodes_.size() - 1);
}

Matrix& Tape::grad_buffer(std::size_t id) {
  Node& node = nodes_[id];
  if (node.grad.size() == 0) node.grad = Matrix::Zero(node.value.rows(), node.value.cols());
  return node.grad;
}

void Tape::backward(const Var& loss) {
  if (!record_) throw RuntimeError("backward on a non-recording tape");
  if (loss.tape() != this || loss.rows() != 1 || loss.cols() != 1) {
    throw ValidationError("backward expects a 1x1 loss on this tape");
  }
  if (!nodes_[loss.id()].requires_grad) return;
  grad_buffer(loss.id()).setOnes();
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (node.backward && node.grad.size() != 0) node.backward(*this, i);
  }
}

const Matrix* Tape::gradient(const Parameter& p) const {
  auto it = parameter_nodes_.find(&p);
  if (it == parameter_nodes_.end()) return nullptr;
  const Node& node = nodes_[it->second];
  return node.grad.size() == 0 ? nullptr : &node.grad;
}

namespace ag {
namespace {

void check_same_tape(const Var& a, const Var& b) {
  if (a.tape() != b.tape()) throw ValidationError("vars belong to different tapes");
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ValidationError(std::string(op) + ": shape mismatch");
  }
}

// Adds `delta` into the gradient of input `id` if it is differentiable.
template <typename Expr>
void accumulate(Tape& tape, std::size_t id, const Expr& delta) {
  if (tape.requires_grad(id)) tape.grad_buffer(id).noalias() += delta;
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  check_same_tape(a, b);
  if (a.cols() != b.rows()) throw ValidationError("matmul: inner dimension mismatch");
  Tape& tape = *a.tape();
  const std::size_t ia = a.id(), ib = b.id();
  return tape.push(a.value() * b.value(), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_of(self);
    if (t.requires_grad(ia)) t.grad_buffer(ia).noalias() += g * t.value_of(ib).transpose();
    if (t.requires_grad(ib)) t.grad_buffer(ib).noalias() += t.value_of(ia).transpose() * g;
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  check_same_tape(x, weight);
  check_same_tape(x, bias);
  if (x.cols() != weight.rows() || bias.rows() != 1 || bias.cols() != weight.cols()) {
    throw ValidationError("linear: shape mismatch");
  }
  Tape& tape = *x.tape();
  Matrix out = x.value() * weight.value();
  out.rowwise() += bias.value().row(0);
  const std::size_t ix = x.id(), iw = weight.id(), ib = bias.id();
  return tape.push(std::move(out), {x, weight, bias}, [ix, iw, ib](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_of(self);
    if (t.requires_grad(ix)) t.grad_buffer(ix).noalias() += g * t.value_of(iw).transpose();
    if (t.requires_grad(iw)) t.grad_buffer(iw).noalias() += t.value_of(ix).transpose() * g;
    accumulate(t, ib, g.colwise().sum());
  });
}

Var add(const Var& a, const Var& b) {
  check_same_tape(a, b);
  check_same_shape(a, b, "add");
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->push(a.value() + b.value(), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    accumulate(t, ia, t.grad_of(self));
    accumulate(t, ib, t.grad_of(self));
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_tape(a, b);
  check_same_shape(a, b, "sub");
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->push(a.value() - b.value(), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    accumulate(t, ia, t.grad_of(self));
    accumulate(t, ib, -t.grad_of(self));
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_tape(a, b);
  check_same_shape(a, b, "mul");
  const std::size_t ia = a.id(), ib = b.id();
  Matrix out = a.value().cwiseProduct(b.value());
  return a.tape()->push(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_of(self);
    accumulate(t, ia, g.cwiseProduct(t.value_of(ib)));
    accumulate(t, ib, g.cwiseProduct(t.value_of(ia)));
  });
}

Var scale(const Var& a, double factor) {
  const std::size_t ia = a.id();
  return a.tape()->push(a.value() * factor, {a}, [ia, factor](Tape& t, std::size_t self) {
    accumulate(t, ia, t.grad_of(self) * factor);
  });
}

Var add_constant(const Var& a, double c) {
  const std::size_t ia = a.id();
  Matrix out = a.value().array() + c;
  return a.tape()->push(std::move(out), {a}, [ia](Tape& t, std::size_t self) {
    accumulate(t, ia, t.grad_of(self));
  });
}

Var add_row(const Var& x, const Var& row) {
  check_same_tape(x, row);
  if (row.rows() != 1 || row.cols() != x.cols()) throw ValidationError("add_row: shape mismatch");
  Matrix out = x.value();
  out.rowwise() += row.value().row(0);
  const std::size_t ix = x.id(), ir = row.id();
  return x.tape()->push(std::move(out), {x, row}, [ix, ir](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_of(self);
    accumulate(t, ix, g);
    accumulate(t, ir, g.colwise().sum());
  });
}

Var mul_row(const Var& x, const Var& row) {
  check_same_tape(x, row);
  if (row.rows() != 1 || row.cols() != x.cols()) throw ValidationError("mul_row: shape mismatch");
  Matrix out = x.value().array().rowwise() * row.value().row(0).array();
  const std::size_t ix = x.id(), ir = row.id();
  return x.tape()->push(std::move(out), {x, row}, [ix, ir](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_of(self);
    if (t.requires_grad(ix)) {
      t.grad_buffer(ix).array() += g.array().rowwise() * t.value_of(ir).row(0).array();
    }
    if (t.requires_grad(ir)) {
      t.grad_buffer(ir).noalias() += g.cwiseProduct(t.value_of(ix)).colwise().sum();
    }
  });
}

namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

}  // namespace

Var gelu(const Var& x) {
  const Matrix& in = x.value();
  Matrix out(in.rows(), in.cols());
  for (Eigen::Index i = 0; i < in.size(); ++i) {
    const double v = in.data()[i];
    out.data()[i] = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
  }
  const std::size_t ix = x.id();
  return x.tape()->push(std::move(out), {x}, [ix](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_of(self);
    const Matrix& in = t.value_of(ix);
    Matrix& dx = t.grad_buffer(ix);
    for (Eigen::Index i = 0; i < in.size(); ++i) {
      const double v = in.data()[i];
      const double th = std::tanh(kGeluC * (v + kGeluA * v * v * v));
      const double d = 0.5 * (1.0 + th) +
                       0.5 * v * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
      dx.data()[i] += g.data()[i] * d;
    }
  });
}

Var silu(const Var& x) {
  const Matrix& in = x.value();
  Matrix out(in.rows(), in.cols());
  for (Eigen::Index i = 0; i < in.size(); ++i) {
    const double v = in.data()[i];
    out.data()[i] = v / (1.0 + std::exp(-v));
  }
  const std::size_t ix = x.id();
  return x.tape()->push(std::move(out), {x}, [ix](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_of(self);
    const Matrix& in = t.value_of(ix);
    Matrix& dx = t.grad_buffer(ix);
    for (Eigen::Index i = 0; i < in.size(); ++i) {
      const double v = in.data()[i];
      const double s = 1.0 / (1.0 + std::exp(-v));
      dx.data()[i] += g.data()[i] * (s * (1.0 + v * (1.0 - s)));
    }
  });
}

Var layer_norm(const Var& x, double eps) {
  const Matrix& in = x.value();
  const Eigen::Index n = in.rows(), d = in.cols();
  Matrix out(n, d);
  Vector inv_std(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mean = in.row(r).mean();
    const double var = (in.row(r).array() - mean).square().mean();
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    out.row(r) = (in.row(r).array() - mean) * inv_std[r];
  }
  const std::size_t ix = x.id();
  return x.tape()->push(std::move(out), {x}, [ix, inv_std](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_of(self);
    const Matrix& y = t.value_of(self);
    Matrix& dx = t.grad_buffer(ix);
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      const double g_mean = g.row(r).mean();
      const double gy_mean = g.row(r).dot(y.row(r)) / static_cast<double>(g.cols());
      dx.row(r).array() +=
          inv_std[r] * (g.row(r).array() - g_mean - y.row(r).array() * gy_mean);
    }
  });
}

Var attention(const Var& q, const Var& k, const Var& v, int heads, int q_len, int kv_len) {
  check_same_tape(q, k);
  check_same_tape(q, v);
  const Eigen::Index dim = q.cols();
  if (heads <= 0 || dim % heads != 0) throw ValidationError("attention: dim not divisible by heads");
  if (k.cols() != dim || v.cols() != dim || k.rows() != v.rows()) {
    throw ValidationError("attention: q/k/v shape mismatch");
  }
  if (q_len <= 0 || kv_len <= 0 || q.rows() % q_len != 0 ||
      k.rows() != (q.rows() / q_len) * kv_len) {
    throw ValidationError("attention: sequence lengths do not tile the batch");
  }
  const Eigen::Index batch = q.rows() / q_len;
  const Eigen::Index hd = dim / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));

  // probs holds softmax weights for (sample, head) blocks of q_len x kv_len.
  auto probs = std::make_shared<std::vector<Matrix>>();
  probs->reserve(static_cast<std::size_t>(batch * heads));
  const Matrix& Q = q.value();
  const Matrix& K = k.value();
  const Matrix& V = v.value();
  Matrix out(q.rows(), dim);
  for (Eigen::Index n = 0; n < batch; ++n) {
    for (Eigen::Index h = 0; h < heads; ++h) {
      auto qb = Q.block(n * q_len, h * hd, q_len, hd);
      auto kb = K.block(n * kv_len, h * hd, kv_len, hd);
      auto vb = V.block(n * kv_len, h * hd, kv_len, hd);
      Matrix s = (qb * kb.transpose()) * inv_sqrt;
      for (Eigen::Index r = 0; r < s.rows(); ++r) {
        const double mx = s.row(r).maxCoeff();
        s.row(r) = (s.row(r).array() - mx).exp();
        s.row(r) /= s.row(r).sum();
      }
      out.block(n * q_len, h * hd, q_len, hd).noalias() = s * vb;
      probs->push_back(std::move(s));
    }
  }
  const std::size_t iq = q.id(), ik = k.id(), iv = v.id();
  return q.tape()->push(
      std::move(out), {q, k, v},
      [iq, ik, iv, probs, heads, q_len, kv_len, batch, hd, inv_sqrt](Tape& t, std::size_t self) {
        const Matrix& g = t.grad_of(self);
        const Matrix& Q = t.value_of(iq);
        const Matrix& K = t.value_of(ik);
        const Matrix& V = t.value_of(iv);
        const bool gq = t.requires_grad(iq), gk = t.requires_grad(ik), gv = t.requires_grad(iv);
        Matrix* dq = gq ? &t.grad_buffer(iq) : nullptr;
        Matrix* dk = gk ? &t.grad_buffer(ik) : nullptr;
        Matrix* dv = gv ? &t.grad_buffer(iv) : nullptr;
        for (Eigen::Index n = 0; n < batch; ++n) {
          for (Eigen::Index h = 0; h < heads; ++h) {
            const Matrix& p = (*probs)[static_cast<std::size_t>(n * heads + h)];
            auto gb = g.block(n * q_len, h * hd, q_len, hd);
            auto vb = V.block(n * kv_len, h * hd, kv_len, hd);
            if (dv) dv->block(n * kv_len, h * hd, kv_len, hd).noalias() += p.transpose() * gb;
            if (!dq && !dk) continue;
            Matrix dp = gb * vb.transpose();
            Matrix ds = p.cwiseProduct(dp);
            const Vector row_dot = ds.rowwise().sum();
            ds -= p.cwiseProduct(row_dot.replicate(1, p.cols()));
            ds *= inv_sqrt;
            if (dq) {
              dq->block(n * q_len, h * hd, q_len, hd).noalias() +=
                  ds * K.block(n * kv_len, h * hd, kv_len, hd);
            }
            if (dk) {
              dk->block(n * kv_len, h * hd, kv_len, hd).noalias() +=
                  ds.transpose() * Q.block(n * q_len, h * hd, q_len, hd);
            }
          }
        }
      });
}

Var repeat_rows(const Var& x, int times) {
  if (times <= 0) throw ValidationError("repeat_rows: times must be positive");
  const Matrix& in = x.value();
  Matrix out(in.rows() * times, in.cols());
  for (Eigen::Index n = 0; n < in.rows(); ++n) {
    out.middleRows(n * times, times) = in.row(n).replicate(times, 1);
  }
  const std::size_t ix = x.id();
  return x.tape()->push(std::move(out), {x}, [ix, times](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_of(self);
    Matrix& dx = t.grad_buffer(ix);
    for (Eigen::Index n = 0; n < dx.rows(); ++n) {
      dx.row(n) += g.middleRows(n * times, times).colwise().sum();
    }
  });
}

Var prepend_rows(const Var& x, const Var& token, int len) {
  check_same_tape(x, token);
  if (len <= 0 || x.rows() % len != 0 || token.rows() != x.rows() / len ||
      token.cols() != x.cols()) {
    throw ValidationError("prepend_rows: shape mismatch");
  }
  const Eigen::Index batch = token.rows();
  Matrix out(batch * (len + 1), x.cols());
  for (Eigen::Index n = 0; n < batch; ++n) {
    out.row(n * (len + 1)) = token.value().row(n);
    out.middleRows(n * (len + 1) + 1, len) = x.value().middleRows(n * len, len);
  }
  const std::size_t ix = x.id(), it = token.id();
  return x.tape()->push(std::move(out), {x, token}, [ix, it, len, batch](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_of(self);
    const bool gx = t.requires_grad(ix), gt = t.requires_grad(it);
    for (Eigen::Index n = 0; n < batch; ++n) {
      if (gt) t.grad_buffer(it).row(n) += g.row(n * (len + 1));
      if (gx) t.grad_buffer(ix).middleRows(n * len, len) += g.middleRows(n * (len + 1) + 1, len);
    }
  });
}

Var drop_first_rows(const Var& x, int len) {
  if (len <= 1 || x.rows() % len != 0) throw ValidationError("drop_first_rows: shape mismatch");
  const Eigen::Index batch = x.rows() / len;
  Matrix out(batch * (len - 1), x.cols());
  for (Eigen::Index n = 0; n < batch; ++n) {
    out.middleRows(n * (len - 1), len - 1) = x.value().middleRows(n * len + 1, len - 1);
  }
  const std::size_t ix = x.id();
  return x.tape()->push(std::move(out), {x}, [ix, len, batch](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_of(self);
    Matrix& dx = t.grad_buffer(ix);
    for (Eigen::Index n = 0; n < batch; ++n) {
      dx.middleRows(n * len + 1, len - 1) += g.middleRows(n * (len - 1), len - 1);
    }
  });
}

Var slice_cols(const Var& x, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count <= 0 || start + count > x.cols()) {
    throw ValidationError("slice_cols: range out of bounds");
  }
  Matrix out = x.value().middleCols(start, count);
  const std::size_t ix = x.id();
  return x.tape()->push(std::move(out), {x}, [ix, start, count](Tape& t, std::size_t self) {
    t.grad_buffer(ix).middleCols(start, count) += t.grad_of(self);
  });
}

Var gather_rows(const Var& table, std::span<const std::int64_t> indices) {
  const Matrix& tab = table.value();
  Matrix out(static_cast<Eigen::Index>(indices.size()), tab.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= tab.rows()) {
      throw OutOfRangeError("gather_rows: index " + std::to_string(indices[i]) + " out of range");
    }
    out.row(static_cast<Eigen::Index>(i)) = tab.row(indices[i]);
  }
  std::vector<std::int64_t> idx(indices.begin(), indices.end());
  const std::size_t it = table.id();
  return table.tape()->push(std::move(out), {table}, [it, idx](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_of(self);
    Matrix& dt = t.grad_buffer(it);
    for (std::size_t i = 0; i < idx.size(); ++i) dt.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
  });
}

Var mse(const Var& a, const Matrix& target) {
  if (a.rows() != target.rows() || a.cols() != target.cols()) {
    throw ValidationError("mse: shape mismatch");
  }
  const double n = static_cast<double>(target.size());
  Matrix out(1, 1);
  out(0, 0) = (a.value() - target).squaredNorm() / n;
  const std::size_t ia = a.id();
  return a.tape()->push(std::move(out), {a}, [ia, target, n](Tape& t, std::size_t self) {
    const double g = t.grad_of(self)(0, 0);
    t.grad_buffer(ia).noalias() += (t.value_of(ia) - target) * (2.0 * g / n);
  });
}

}  // namespace ag
}  // namespace laduree
