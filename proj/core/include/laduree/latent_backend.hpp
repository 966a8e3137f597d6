#pragma once

#include "laduree/named_tensor.hpp"
#include "laduree/nn.hpp"
#include "laduree/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace laduree {

/// Global scalar rescaling of latents to a target standard deviation.
struct LatentNormalizer {
  double scale = 1.0;
  double target_std = 1.0 / 3.0;

  [[nodiscard]] Vector normalize(const Vector& latent) const { return latent * scale; }
  [[nodiscard]] Vector denormalize(const Vector& latent) const { return latent / scale; }
};

/// scale = target_std / std over every element of every latent. The scale is
/// rounded to float32 because the archive stores it that way, so sender and
/// receiver use the same value. Throws DegenerateInputError for empty input
/// or zero variance.
LatentNormalizer fit_normalizer(std::span<const Vector> latents, double target_std = 1.0 / 3.0);

enum class BackendKind : std::uint8_t { PixelIdentity = 0, TinyAutoencoder = 1, ExternalLatents = 2 };

std::string_view to_string(BackendKind kind);
BackendKind parse_backend_kind(std::string_view text);

struct AutoencoderOptions {
  int latent_channels = 8;
  int hidden = 64;
  int steps = 3000;
  double lr = 3e-3;
  std::uint64_t seed = 0;
};

/// Per-patch autoencoder: a stride-2 2x2 convolution followed by a 1x1
/// convolution, mirrored on the decoder side. (3, s, s) images map to
/// (c, s/2, s/2) latents.
class TinyAutoencoder {
 public:
  static constexpr int kPatch = 2;

  TinyAutoencoder() = default;
  TinyAutoencoder(int latent_channels, int hidden, std::uint64_t init_seed);

  /// Full-batch Adam on pixel MSE over all patches of `images`. Returns the
  /// final training loss.
  double train(std::span<const Image> images, int steps, double lr);

  [[nodiscard]] Shape3 latent_shape(const Shape3& image_shape) const;
  [[nodiscard]] Tensor3 encode(const Image& image) const;
  [[nodiscard]] Image decode(const Tensor3& latent) const;

  /// Decoder tensors only; the receiver never encodes.
  [[nodiscard]] TensorList export_decoder() const;
  void import_decoder(const TensorList& tensors);
  [[nodiscard]] TensorList export_all() const;
  void import_all(const TensorList& tensors);

  [[nodiscard]] int latent_channels() const { return latent_channels_; }
  [[nodiscard]] int hidden() const { return hidden_; }

 private:
  [[nodiscard]] Var encode_tokens(Tape& tape, const Var& patches) const;
  [[nodiscard]] Var decode_tokens(Tape& tape, const Var& codes) const;
  ParamList params(bool decoder_only);

  int latent_channels_ = 0;
  int hidden_ = 0;
  Linear enc1_, enc2_, dec1_, dec2_;
};

/// Directory of per-image latents: `manifest.csv` with header
/// `image_id,filename` plus one tensor file per image holding a tensor
/// named "latent" of shape (c, h, w).
class ExternalLatentStore {
 public:
  ExternalLatentStore() = default;
  explicit ExternalLatentStore(std::filesystem::path dir);

  /// Throws LookupError when the id is not in the manifest.
  [[nodiscard]] Tensor3 lookup(std::string_view image_id) const;
  [[nodiscard]] const std::filesystem::path& directory() const { return dir_; }
  [[nodiscard]] std::size_t size() const { return files_.size(); }

  /// Writes a store from (id, latent) pairs.
  static void write(const std::filesystem::path& dir, std::span<const std::string> ids,
                    std::span<const Tensor3> latents);

 private:
  std::filesystem::path dir_;
  std::map<std::string, std::string, std::less<>> files_;
};

void write_latent_file(const std::filesystem::path& path, const Tensor3& latent);
Tensor3 read_latent_file(const std::filesystem::path& path);

/// Image <-> latent conversion used by the codec.
///
/// PixelIdentity maps [0, 1] to [-1, 1]. TinyAutoencoder runs the trained
/// per-patch autoencoder. ExternalLatents reads latents keyed by image id
/// and decodes by running `decode_command <latent file> <png file>`.
class LatentBackend {
 public:
  LatentBackend() = default;

  static LatentBackend pixel_identity();
  static LatentBackend tiny_autoencoder(TinyAutoencoder autoencoder);
  static LatentBackend external(std::optional<ExternalLatentStore> store, std::string decode_command,
                                Shape3 latent_shape);

  [[nodiscard]] BackendKind kind() const { return kind_; }
  [[nodiscard]] Shape3 latent_shape(const Shape3& image_shape) const;
  [[nodiscard]] Tensor3 encode(const Image& image, std::string_view image_id) const;
  [[nodiscard]] Image decode(const Tensor3& latent) const;

  [[nodiscard]] const TinyAutoencoder* autoencoder() const { return autoencoder_ ? &*autoencoder_ : nullptr; }
  /// Where ExternalLatents decode writes its temporary files.
  void set_scratch_dir(std::filesystem::path dir) { scratch_dir_ = std::move(dir); }

 private:
  BackendKind kind_ = BackendKind::PixelIdentity;
  std::optional<TinyAutoencoder> autoencoder_;
  std::optional<ExternalLatentStore> store_;
  std::string decode_command_;
  Shape3 external_shape_{};
  std::filesystem::path scratch_dir_;
};

}  // namespace laduree
