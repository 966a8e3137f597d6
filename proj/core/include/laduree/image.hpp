#pragma once

#include "laduree/tensor.hpp"

#include <filesystem>
#include <limits>

namespace laduree {

/// Reads any PNG and converts it to 8-bit RGB scaled to [0, 1].
Image read_png(const std::filesystem::path& path);

/// Writes 8-bit RGB; values are clamped to [0, 1] and rounded.
void write_png(const std::filesystem::path& path, const Image& image);

/// Mean squared difference; throws ValidationError on shape mismatch.
double mse(const Tensor3& a, const Tensor3& b);

/// 10 log10(1 / mse). Identical inputs give +infinity.
double psnr(const Tensor3& a, const Tensor3& b);

inline constexpr double kInfinitePsnr = std::numeric_limits<double>::infinity();

/// Formats a PSNR for CSV/JSON output; infinity becomes "inf".
std::string format_psnr(double db);

/// Quantizes to the 8-bit grid written by write_png.
Image to_8bit_grid(const Image& image);

}  // namespace laduree
