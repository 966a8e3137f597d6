#pragma once

#include "laduree/tensor.hpp"

#include <cstdint>
#include <vector>

namespace laduree {

/// Deterministic synthetic RGB images: a colour gradient background, a few
/// soft blobs and one hard-edged disc or rectangle. Values lie on the 8-bit
/// grid so they survive a PNG round trip unchanged.
std::vector<Image> make_toy_images(int count, int side, std::uint64_t seed);

}  // namespace laduree
