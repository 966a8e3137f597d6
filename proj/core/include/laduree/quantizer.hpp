#pragma once

#include "laduree/named_tensor.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace laduree {

/// Reduced-precision float layout: sign (MSB), e exponent bits with bias
/// 2^(e-1), m fraction bits (LSBs). Exponents span [-2^(e-1), 2^(e-1)-1].
struct QuantSpec {
  int e_bits = 5;
  int m_bits = 10;

  [[nodiscard]] int total_bits() const { return 1 + e_bits + m_bits; }
  [[nodiscard]] int bias() const { return 1 << (e_bits - 1); }
  [[nodiscard]] int min_exponent() const { return -bias(); }
  [[nodiscard]] int max_exponent() const { return bias() - 1; }
  /// e in [2, 10], m >= 1, 1 + e + m <= 32.
  void validate() const;

  friend bool operator==(const QuantSpec&, const QuantSpec&) = default;
};

/// Encodes a finite value. The mantissa is truncated toward zero; exponents
/// above range saturate to the largest magnitude; magnitudes below
/// 2^(emin-1) flush to signed zero; the remaining underflow band clamps to
/// the smallest nonzero magnitude (1 + 2^-m) 2^emin, because the all-zero
/// exponent/fraction pattern is reserved for zero. Throws ValidationError
/// for NaN or infinity.
std::uint32_t encode_value(float x, const QuantSpec& spec);

/// Inverse layout; all-zero exponent and fraction decode to +/-0.
double decode_value(std::uint32_t code, const QuantSpec& spec);

/// decode_value(encode_value(x)).
double quantize_value(float x, const QuantSpec& spec);

/// Concatenates codes MSB-first into bytes; the final byte is zero padded.
std::vector<std::uint8_t> pack_bits(std::span<const std::uint32_t> codes, int bits_per_code);

/// Exact inverse of pack_bits. Throws CorruptInputError when `bytes` is
/// shorter than ceil(count * bits / 8).
std::vector<std::uint32_t> unpack_bits(std::span<const std::uint8_t> bytes, std::size_t count,
                                       int bits_per_code);

std::size_t packed_size_bytes(std::int64_t num_values, int bits_per_code);

struct PackedWeights {
  QuantSpec spec;
  std::int64_t num_values = 0;
  std::vector<std::uint8_t> blob;
  std::vector<TensorInfo> manifest;

  /// num_values * (1 + e + m); headers are accounted elsewhere.
  [[nodiscard]] std::int64_t model_bits() const { return num_values * spec.total_bits(); }
};

struct QuantizedModel {
  PackedWeights packed;
  TensorList dequantized;
};

/// Quantizes tensors in list order into one contiguous bitstream and
/// returns the values a receiver will decode.
QuantizedModel quantize_model(const TensorList& weights, const QuantSpec& spec);

/// Receiver side: rebuilds float tensors from the blob and manifest.
TensorList dequantize_model(const PackedWeights& packed);

}  // namespace laduree
