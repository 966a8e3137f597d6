#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace laduree {

/// One entry of a tensor manifest: name, shape and row-major float32 data.
struct NamedTensor {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<float> data;

  [[nodiscard]] std::int64_t numel() const {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }
};

using TensorList = std::vector<NamedTensor>;

/// Name and shape without data; what the archive manifest stores.
struct TensorInfo {
  std::string name;
  std::vector<std::int64_t> shape;

  friend bool operator==(const TensorInfo&, const TensorInfo&) = default;
};

std::vector<TensorInfo> manifest_of(const TensorList& tensors);
std::int64_t total_values(const TensorList& tensors);

}  // namespace laduree
