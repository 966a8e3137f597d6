#include "laduree/quantizer.hpp"

#include "laduree/errors.hpp"

#include <cmath>

namespace laduree {

void QuantSpec::validate() const {
  if (e_bits < 2 || e_bits > 10) {
    throw ValidationError("e_bits must lie in [2, 10], got " + std::to_string(e_bits));
  }
  if (m_bits < 1) throw ValidationError("m_bits must be >= 1, got " + std::to_string(m_bits));
  if (total_bits() > 32) {
    throw ValidationError("1 + e + m must be <= 32, got " + std::to_string(total_bits()));
  }
}

namespace {

std::uint32_t assemble(bool negative, std::uint32_t field, std::uint32_t fraction,
                       const QuantSpec& spec) {
  const std::uint32_t sign = negative ? 1u : 0u;
  return (sign << (spec.e_bits + spec.m_bits)) | (field << spec.m_bits) | fraction;
}

}  // namespace

std::uint32_t encode_value(float x, const QuantSpec& spec) {
  if (!std::isfinite(x)) throw ValidationError("cannot quantize a non-finite value");
  const bool negative = std::signbit(x);
  const double magnitude = std::fabs(static_cast<double>(x));
  if (magnitude == 0.0) return assemble(negative, 0, 0, spec);

  int exp2 = 0;
  const double fr = std::frexp(magnitude, &exp2);  // magnitude = fr 2^exp2, fr in [0.5, 1)
  const int exponent = exp2 - 1;
  const double significand = 2.0 * fr;              // in [1, 2)

  const std::uint32_t max_field = (1u << spec.e_bits) - 1u;
  const std::uint32_t max_fraction = (1u << spec.m_bits) - 1u;
  if (exponent > spec.max_exponent()) return assemble(negative, max_field, max_fraction, spec);
  if (exponent < spec.min_exponent()) {
    if (magnitude < std::ldexp(1.0, spec.min_exponent() - 1)) return assemble(negative, 0, 0, spec);
    return assemble(negative, 0, 1, spec);
  }
  const auto fraction =
      static_cast<std::uint32_t>(std::floor(std::ldexp(significand - 1.0, spec.m_bits)));
  const auto field = static_cast<std::uint32_t>(exponent - spec.min_exponent());
  if (field == 0 && fraction == 0) return assemble(negative, 0, 1, spec);
  return assemble(negative, field, fraction, spec);
}

double decode_value(std::uint32_t code, const QuantSpec& spec) {
  const std::uint32_t fraction = code & ((1u << spec.m_bits) - 1u);
  const std::uint32_t field = (code >> spec.m_bits) & ((1u << spec.e_bits) - 1u);
  const bool negative = ((code >> (spec.e_bits + spec.m_bits)) & 1u) != 0;
  double magnitude = 0.0;
  if (field != 0 || fraction != 0) {
    magnitude = std::ldexp(1.0 + std::ldexp(static_cast<double>(fraction), -spec.m_bits),
                           static_cast<int>(field) + spec.min_exponent());
  }
  return negative ? -magnitude : magnitude;
}

double quantize_value(float x, const QuantSpec& spec) {
  return decode_value(encode_value(x, spec), spec);
}

std::size_t packed_size_bytes(std::int64_t num_values, int bits_per_code) {
  return static_cast<std::size_t>((num_values * bits_per_code + 7) / 8);
}

std::vector<std::uint8_t> pack_bits(std::span<const std::uint32_t> codes, int bits_per_code) {
  if (bits_per_code < 1 || bits_per_code > 32) throw ValidationError("bits per code must be 1..32");
  const std::uint64_t limit = std::uint64_t{1} << bits_per_code;
  std::vector<std::uint8_t> out;
  out.reserve(packed_size_bytes(static_cast<std::int64_t>(codes.size()), bits_per_code));
  std::uint64_t acc = 0;
  int pending = 0;
  for (std::uint32_t code : codes) {
    if (code >= limit) {
      throw ValidationError("code " + std::to_string(code) + " does not fit in " +
                            std::to_string(bits_per_code) + " bits");
    }
    acc = (acc << bits_per_code) | code;
    pending += bits_per_code;
    while (pending >= 8) {
      pending -= 8;
      out.push_back(static_cast<std::uint8_t>(acc >> pending));
    }
    acc &= (std::uint64_t{1} << pending) - 1;
  }
  if (pending > 0) out.push_back(static_cast<std::uint8_t>(acc << (8 - pending)));
  return out;
}

std::vector<std::uint32_t> unpack_bits(std::span<const std::uint8_t> bytes, std::size_t count,
                                       int bits_per_code) {
  if (bits_per_code < 1 || bits_per_code > 32) throw ValidationError("bits per code must be 1..32");
  const std::size_t needed = packed_size_bytes(static_cast<std::int64_t>(count), bits_per_code);
  if (bytes.size() < needed) {
    throw CorruptInputError("packed stream truncated: need " + std::to_string(needed) +
                            " bytes, have " + std::to_string(bytes.size()));
  }
  std::vector<std::uint32_t> out;
  out.reserve(count);
  std::uint64_t acc = 0;
  int pending = 0;
  std::size_t pos = 0;
  const std::uint64_t mask = (std::uint64_t{1} << bits_per_code) - 1;
  for (std::size_t i = 0; i < count; ++i) {
    while (pending < bits_per_code) {
      acc = (acc << 8) | bytes[pos++];
      pending += 8;
    }
    pending -= bits_per_code;
    out.push_back(static_cast<std::uint32_t>((acc >> pending) & mask));
    acc &= (std::uint64_t{1} << pending) - 1;
  }
  return out;
}

QuantizedModel quantize_model(const TensorList& weights, const QuantSpec& spec) {
  spec.validate();
  QuantizedModel result;
  result.packed.spec = spec;
  result.packed.manifest = manifest_of(weights);
  std::vector<std::uint32_t> codes;
  codes.reserve(static_cast<std::size_t>(total_values(weights)));
  for (const NamedTensor& tensor : weights) {
    NamedTensor deq{tensor.name, tensor.shape, {}};
    deq.data.reserve(tensor.data.size());
    for (float v : tensor.data) {
      if (!std::isfinite(v)) {
        throw ValidationError("tensor '" + tensor.name + "' contains a non-finite value");
      }
      const std::uint32_t code = encode_value(v, spec);
      codes.push_back(code);
      deq.data.push_back(static_cast<float>(decode_value(code, spec)));
    }
    result.dequantized.push_back(std::move(deq));
  }
  result.packed.num_values = static_cast<std::int64_t>(codes.size());
  result.packed.blob = pack_bits(codes, spec.total_bits());
  return result;
}

TensorList dequantize_model(const PackedWeights& packed) {
  packed.spec.validate();
  std::int64_t expected = 0;
  for (const auto& info : packed.manifest) {
    std::int64_t n = 1;
    for (auto d : info.shape) n *= d;
    expected += n;
  }
  if (expected != packed.num_values) {
    throw CorruptInputError("manifest describes " + std::to_string(expected) + " values, header says " +
                            std::to_string(packed.num_values));
  }
  const auto codes = unpack_bits(packed.blob, static_cast<std::size_t>(packed.num_values),
                                 packed.spec.total_bits());
  TensorList out;
  std::size_t pos = 0;
  for (const auto& info : packed.manifest) {
    NamedTensor t{info.name, info.shape, {}};
    const auto n = static_cast<std::size_t>(t.numel());
    t.data.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      t.data.push_back(static_cast<float>(decode_value(codes[pos++], packed.spec)));
    }
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace laduree
