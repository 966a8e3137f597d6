#include "laduree/checkpoint.hpp"

#include "laduree/errors.hpp"

#include <algorithm>
#include <bit>
#include <fstream>

static_assert(std::endian::native == std::endian::little, "serialization assumes little-endian host");

namespace laduree {

void ByteWriter::put_string16(const std::string& s) {
  if (s.size() > UINT16_MAX) throw ValidationError("string too long for u16 length");
  put<std::uint16_t>(static_cast<std::uint16_t>(s.size()));
  bytes_.insert(bytes_.end(), s.begin(), s.end());
}

void ByteWriter::put_string32(const std::string& s) {
  put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
  bytes_.insert(bytes_.end(), s.begin(), s.end());
}

std::span<const std::uint8_t> ByteReader::take(std::size_t n) {
  if (n > remaining()) throw CorruptInputError("unexpected end of data");
  auto out = bytes_.subspan(pos_, n);
  pos_ += n;
  return out;
}

std::string ByteReader::get_string16() {
  const auto n = get<std::uint16_t>();
  const auto raw = take(n);
  return std::string(raw.begin(), raw.end());
}

std::string ByteReader::get_string32() {
  const auto n = get<std::uint32_t>();
  const auto raw = take(n);
  return std::string(raw.begin(), raw.end());
}

namespace {

constexpr char kMagic[4] = {'L', 'D', 'C', 'K'};

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& checkpoint) {
  TensorList tensors = checkpoint.tensors;
  std::sort(tensors.begin(), tensors.end(),
            [](const NamedTensor& a, const NamedTensor& b) { return a.name < b.name; });
  for (std::size_t i = 1; i < tensors.size(); ++i) {
    if (tensors[i].name == tensors[i - 1].name) {
      throw ValidationError("duplicate tensor name '" + tensors[i].name + "'");
    }
  }
  ByteWriter w;
  for (char c : kMagic) w.put<char>(c);
  w.put<std::uint16_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(checkpoint.metadata.size()));
  for (const auto& [key, value] : checkpoint.metadata) {
    w.put_string16(key);
    w.put_string32(value);
  }
  w.put<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    if (static_cast<std::int64_t>(t.data.size()) != t.numel()) {
      throw ValidationError("tensor '" + t.name + "' data does not match its shape");
    }
    if (t.shape.size() > 255) throw ValidationError("tensor rank too large");
    w.put_string16(t.name);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(t.shape.size()));
    for (auto d : t.shape) w.put<std::int64_t>(d);
    for (float v : t.data) w.put<float>(v);
  }
  return std::move(w.bytes());
}

Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  const auto magic = r.take(4);
  if (!std::equal(magic.begin(), magic.end(), kMagic)) throw CorruptInputError("not a tensor file (bad magic)");
  const auto version = r.get<std::uint16_t>();
  if (version != kCheckpointVersion) {
    throw CorruptInputError("unsupported tensor file version " + std::to_string(version));
  }
  Checkpoint ck;
  const auto n_meta = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string key = r.get_string16();
    ck.metadata[key] = r.get_string32();
  }
  const auto n_tensors = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    NamedTensor t;
    t.name = r.get_string16();
    const auto ndim = r.get<std::uint8_t>();
    for (int d = 0; d < ndim; ++d) {
      const auto dim = r.get<std::int64_t>();
      if (dim < 0) throw CorruptInputError("negative dimension in tensor '" + t.name + "'");
      t.shape.push_back(dim);
    }
    const auto n = static_cast<std::size_t>(t.numel());
    if (n > r.remaining() / sizeof(float)) throw CorruptInputError("tensor '" + t.name + "' truncated");
    t.data.resize(n);
    const auto raw = r.take(n * sizeof(float));
    std::memcpy(t.data.data(), raw.data(), raw.size());
    if (!ck.tensors.empty() && !(ck.tensors.back().name < t.name)) {
      throw CorruptInputError("tensor names not in ascending order at '" + t.name + "'");
    }
    ck.tensors.push_back(std::move(t));
  }
  if (r.remaining() != 0) throw CorruptInputError("trailing bytes after tensor file");
  return ck;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw RuntimeError("write failed for " + path.string());
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  write_file_bytes(path, serialize_checkpoint(checkpoint));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  return parse_checkpoint(read_file_bytes(path));
}

}  // namespace laduree
