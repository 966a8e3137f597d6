#pragma once

#include "laduree/checkpoint.hpp"
#include "laduree/denoiser.hpp"
#include "laduree/diffusion.hpp"
#include "laduree/latent_backend.hpp"
#include "laduree/quantizer.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace laduree {

/// Everything a receiver needs besides the weights.
struct ArchiveHeader {
  std::uint32_t num_images = 0;  // M
  std::uint32_t image_side = 0;  // s
  Shape3 latent_shape{};
  ScheduleSpec schedule;
  DenoiserConfig denoiser;  // num_images and latent_shape mirror the fields above
  BackendKind backend = BackendKind::PixelIdentity;
  float normalizer_scale = 1.0F;
  QuantSpec quant;

  friend bool operator==(const ArchiveHeader& a, const ArchiveHeader& b);
};

/// Compressed archive. Byte layout, little-endian:
///
///   "LDUR" | u16 version | u32 M | u32 s | u32 c, h, w
///   | u32 T | f64 beta_start | f64 beta_end
///   | u32 B | u32 H | u32 heads | u32 p | u8 embed kind | u64 embed seed
///   | u8 cond kind | f64 mlp ratio | u8 backend kind
///   | f32 normalizer scale | u8 e | u8 m
///   | u32 n_tensors | n_tensors x (u16 len, name, u8 ndim, ndim x u32 dim)
///   | u64 num_values | u64 blob bytes | blob
///   | u64 backend bytes | backend tensor file (empty unless autoencoder)
///   | u32 CRC-32 of every preceding byte
struct Archive {
  ArchiveHeader header;
  PackedWeights weights;
  TensorList backend_tensors;
};

inline constexpr std::uint16_t kArchiveVersion = 1;

std::vector<std::uint8_t> serialize_archive(const Archive& archive);
/// Throws CorruptInputError on checksum mismatch or malformed content.
Archive parse_archive(std::span<const std::uint8_t> bytes);

void write_archive(const std::filesystem::path& path, const Archive& archive);
Archive read_archive(const std::filesystem::path& path);

/// Size split for accounting: blob bits plus everything else.
struct ArchiveBits {
  std::int64_t total_bits = 0;
  std::int64_t blob_bits = 0;   // padded blob, 8 * bytes
  std::int64_t header_bits = 0; // total - blob
};

ArchiveBits archive_bits(const Archive& archive);

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes);

}  // namespace laduree
