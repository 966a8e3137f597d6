#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>

namespace laduree {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

struct Shape3 {
  int channels = 0;
  int height = 0;
  int width = 0;

  [[nodiscard]] std::int64_t numel() const {
    return static_cast<std::int64_t>(channels) * height * width;
  }
  friend bool operator==(const Shape3&, const Shape3&) = default;
};

std::string to_string(const Shape3& shape);

/// Channel-major (C, H, W) tensor. Used for both images and latents.
struct Tensor3 {
  Shape3 shape;
  Vector values;

  Tensor3() = default;
  explicit Tensor3(Shape3 s) : shape(s), values(Vector::Zero(s.numel())) {}
  Tensor3(Shape3 s, Vector v);

  [[nodiscard]] double& at(int c, int y, int x) {
    return values[(static_cast<std::int64_t>(c) * shape.height + y) * shape.width + x];
  }
  [[nodiscard]] double at(int c, int y, int x) const {
    return values[(static_cast<std::int64_t>(c) * shape.height + y) * shape.width + x];
  }
};

/// Images are RGB tensors with values in [0, 1].
using Image = Tensor3;

}  // namespace laduree
