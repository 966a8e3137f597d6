#include "laduree/archive.hpp"

#include "laduree/errors.hpp"

#include <zlib.h>

#include <algorithm>
#include <limits>

namespace laduree {

namespace {

constexpr char kMagic[4] = {'L', 'D', 'U', 'R'};

std::uint32_t checked_u32(std::int64_t v, const char* what) {
  if (v < 0 || v > std::numeric_limits<std::uint32_t>::max()) {
    throw ValidationError(std::string(what) + " does not fit in 32 bits");
  }
  return static_cast<std::uint32_t>(v);
}

}  // namespace

bool operator==(const ArchiveHeader& a, const ArchiveHeader& b) {
  const auto& x = a.denoiser;
  const auto& y = b.denoiser;
  return a.num_images == b.num_images && a.image_side == b.image_side && a.latent_shape == b.latent_shape &&
         a.schedule == b.schedule && x.depth == y.depth && x.hidden == y.hidden && x.num_heads == y.num_heads &&
         x.patch_size == y.patch_size && x.mlp_ratio == y.mlp_ratio && x.embedding == y.embedding &&
         x.conditioning == y.conditioning && x.embed_seed == y.embed_seed && a.backend == b.backend &&
         a.normalizer_scale == b.normalizer_scale && a.quant == b.quant;
}

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(bytes.size() - pos, 1U << 30));
    crc = crc32(crc, bytes.data() + pos, n);
    pos += n;
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> serialize_archive(const Archive& archive) {
  const auto& h = archive.header;
  const auto& d = h.denoiser;
  h.quant.validate();
  ByteWriter w;
  for (char c : kMagic) w.put<char>(c);
  w.put<std::uint16_t>(kArchiveVersion);
  w.put<std::uint32_t>(h.num_images);
  w.put<std::uint32_t>(h.image_side);
  w.put<std::uint32_t>(checked_u32(h.latent_shape.channels, "latent channels"));
  w.put<std::uint32_t>(checked_u32(h.latent_shape.height, "latent height"));
  w.put<std::uint32_t>(checked_u32(h.latent_shape.width, "latent width"));
  w.put<std::uint32_t>(checked_u32(h.schedule.steps, "steps"));
  w.put<double>(h.schedule.beta_start);
  w.put<double>(h.schedule.beta_end);
  w.put<std::uint32_t>(checked_u32(d.depth, "depth"));
  w.put<std::uint32_t>(checked_u32(d.hidden, "hidden"));
  w.put<std::uint32_t>(checked_u32(d.num_heads, "heads"));
  w.put<std::uint32_t>(checked_u32(d.patch_size, "patch size"));
  w.put<std::uint8_t>(static_cast<std::uint8_t>(d.embedding));
  w.put<std::uint64_t>(d.embed_seed);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(d.conditioning));
  w.put<double>(d.mlp_ratio);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(h.backend));
  w.put<float>(h.normalizer_scale);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(h.quant.e_bits));
  w.put<std::uint8_t>(static_cast<std::uint8_t>(h.quant.m_bits));

  const auto& pw = archive.weights;
  if (!(pw.spec == h.quant)) throw ValidationError("packed weights use a different quant spec than the header");
  if (pw.blob.size() != packed_size_bytes(pw.num_values, pw.spec.total_bits())) {
    throw ValidationError("packed blob length does not match num_values");
  }
  w.put<std::uint32_t>(checked_u32(static_cast<std::int64_t>(pw.manifest.size()), "tensor count"));
  for (const auto& info : pw.manifest) {
    w.put_string16(info.name);
    if (info.shape.size() > 255) throw ValidationError("tensor rank too large");
    w.put<std::uint8_t>(static_cast<std::uint8_t>(info.shape.size()));
    for (auto dim : info.shape) w.put<std::uint32_t>(checked_u32(dim, "tensor dimension"));
  }
  w.put<std::uint64_t>(static_cast<std::uint64_t>(pw.num_values));
  w.put<std::uint64_t>(pw.blob.size());
  w.put_bytes(pw.blob);

  if (archive.backend_tensors.empty()) {
    w.put<std::uint64_t>(0);
  } else {
    const auto backend = serialize_checkpoint(Checkpoint{{}, archive.backend_tensors});
    w.put<std::uint64_t>(backend.size());
    w.put_bytes(backend);
  }
  const std::uint32_t crc = crc32_of(w.bytes());
  w.put<std::uint32_t>(crc);
  return std::move(w.bytes());
}

Archive parse_archive(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) throw CorruptInputError("archive too short");
  const auto body = bytes.first(bytes.size() - 4);
  std::uint32_t stored = 0;
  std::memcpy(&stored, bytes.data() + body.size(), 4);
  if (crc32_of(body) != stored) throw CorruptInputError("archive checksum mismatch");

  ByteReader r(body);
  const auto magic = r.take(4);
  if (!std::equal(magic.begin(), magic.end(), kMagic)) throw CorruptInputError("not an archive (bad magic)");
  const auto version = r.get<std::uint16_t>();
  if (version != kArchiveVersion) throw CorruptInputError("unsupported archive version " + std::to_string(version));

  Archive a;
  auto& h = a.header;
  auto& d = h.denoiser;
  h.num_images = r.get<std::uint32_t>();
  h.image_side = r.get<std::uint32_t>();
  h.latent_shape.channels = static_cast<int>(r.get<std::uint32_t>());
  h.latent_shape.height = static_cast<int>(r.get<std::uint32_t>());
  h.latent_shape.width = static_cast<int>(r.get<std::uint32_t>());
  h.schedule.steps = static_cast<int>(r.get<std::uint32_t>());
  h.schedule.beta_start = r.get<double>();
  h.schedule.beta_end = r.get<double>();
  d.depth = static_cast<int>(r.get<std::uint32_t>());
  d.hidden = static_cast<int>(r.get<std::uint32_t>());
  d.num_heads = static_cast<int>(r.get<std::uint32_t>());
  d.patch_size = static_cast<int>(r.get<std::uint32_t>());
  const auto embed = r.get<std::uint8_t>();
  if (embed > static_cast<std::uint8_t>(EmbeddingKind::MLP)) throw CorruptInputError("bad embedding kind");
  d.embedding = static_cast<EmbeddingKind>(embed);
  d.embed_seed = r.get<std::uint64_t>();
  const auto cond = r.get<std::uint8_t>();
  if (cond > static_cast<std::uint8_t>(ConditioningKind::ALNZ)) throw CorruptInputError("bad conditioning kind");
  d.conditioning = static_cast<ConditioningKind>(cond);
  d.mlp_ratio = r.get<double>();
  const auto backend = r.get<std::uint8_t>();
  if (backend > static_cast<std::uint8_t>(BackendKind::ExternalLatents)) throw CorruptInputError("bad backend kind");
  h.backend = static_cast<BackendKind>(backend);
  h.normalizer_scale = r.get<float>();
  h.quant.e_bits = r.get<std::uint8_t>();
  h.quant.m_bits = r.get<std::uint8_t>();
  d.num_images = h.num_images;
  d.latent_shape = h.latent_shape;
  try {
    h.quant.validate();
    d.validate();
  } catch (const ValidationError& e) {
    throw CorruptInputError(std::string("archive header invalid: ") + e.what());
  }

  auto& pw = a.weights;
  pw.spec = h.quant;
  const auto n_tensors = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    TensorInfo info;
    info.name = r.get_string16();
    const auto ndim = r.get<std::uint8_t>();
    for (int k = 0; k < ndim; ++k) info.shape.push_back(r.get<std::uint32_t>());
    pw.manifest.push_back(std::move(info));
  }
  pw.num_values = static_cast<std::int64_t>(r.get<std::uint64_t>());
  std::int64_t manifest_values = 0;
  for (const auto& info : pw.manifest) {
    std::int64_t n = 1;
    for (auto dim : info.shape) n *= dim;
    manifest_values += n;
  }
  if (manifest_values != pw.num_values) throw CorruptInputError("manifest does not cover num_values");
  const auto blob_len = r.get<std::uint64_t>();
  if (blob_len != packed_size_bytes(pw.num_values, pw.spec.total_bits())) {
    throw CorruptInputError("blob length does not match num_values");
  }
  const auto blob = r.take(blob_len);
  pw.blob.assign(blob.begin(), blob.end());
  const auto backend_len = r.get<std::uint64_t>();
  if (backend_len > 0) a.backend_tensors = parse_checkpoint(r.take(backend_len)).tensors;
  if (r.remaining() != 0) throw CorruptInputError("trailing bytes in archive");
  return a;
}

void write_archive(const std::filesystem::path& path, const Archive& archive) {
  write_file_bytes(path, serialize_archive(archive));
}

Archive read_archive(const std::filesystem::path& path) { return parse_archive(read_file_bytes(path)); }

ArchiveBits archive_bits(const Archive& archive) {
  ArchiveBits out;
  out.total_bits = static_cast<std::int64_t>(serialize_archive(archive).size()) * 8;
  out.blob_bits = static_cast<std::int64_t>(archive.weights.blob.size()) * 8;
  out.header_bits = out.total_bits - out.blob_bits;
  return out;
}

}  // namespace laduree
