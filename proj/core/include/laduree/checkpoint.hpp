#pragma once

#include "laduree/named_tensor.hpp"

#include <cstdint>
#include <cstring>
#include <type_traits>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace laduree {

/// Tensor file: metadata key/values plus a tensor manifest with float32
/// payloads, tensors in ascending name order. All integers little-endian.
///
///   "LDCK" | u16 version | u32 n_meta | n_meta x (u16 len, key, u32 len, value)
///   | u32 n_tensors | n_tensors x (u16 len, name, u8 ndim, ndim x i64 dim,
///   numel x f32)
struct Checkpoint {
  std::map<std::string, std::string> metadata;
  TensorList tensors;
};

inline constexpr std::uint16_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Whole-file helpers shared by the checkpoint and archive code.
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

/// Little-endian writer/reader for fixed-width fields.
class ByteWriter {
 public:
  template <typename T>
  void put(T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    std::uint8_t raw[sizeof(T)];
    std::memcpy(raw, &value, sizeof(T));
    bytes_.insert(bytes_.end(), raw, raw + sizeof(T));  // host is little-endian
  }
  void put_bytes(std::span<const std::uint8_t> data) { bytes_.insert(bytes_.end(), data.begin(), data.end()); }
  void put_string16(const std::string& s);
  void put_string32(const std::string& s);
  [[nodiscard]] std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    static_assert(std::is_trivially_copyable_v<T>);
    T value;
    std::memcpy(&value, take(sizeof(T)).data(), sizeof(T));
    return value;
  }
  std::span<const std::uint8_t> take(std::size_t n);
  std::string get_string16();
  std::string get_string32();
  [[nodiscard]] std::size_t position() const { return pos_; }
  [[nodiscard]] std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace laduree
