#pragma once

#include "laduree/archive.hpp"
#include "laduree/checkpoint.hpp"
#include "laduree/denoiser.hpp"
#include "laduree/diffusion.hpp"
#include "laduree/dl_ledger.hpp"
#include "laduree/latent_backend.hpp"
#include "laduree/quantizer.hpp"
#include "laduree/training.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace laduree {

struct DatasetEntry {
  std::string image_id;            // file stem
  std::filesystem::path filename;  // as read
  std::int64_t index = 0;
};

/// Closed image set with its random index bijection.
struct IndexImageDataset {
  std::vector<Image> images;
  std::vector<DatasetEntry> entries;  // parallel to images
  std::uint64_t assignment_seed = 0;

  [[nodiscard]] std::size_t size() const { return images.size(); }
  [[nodiscard]] Shape3 image_shape() const { return images.front().shape; }
  /// Position of the image carrying index y.
  [[nodiscard]] std::size_t position_of_index(std::int64_t y) const;
  [[nodiscard]] std::vector<std::int64_t> indices() const;
};

/// Uniformly random permutation of 0..M-1: Fisher-Yates from the back
/// driven by Rng(seed). Image i receives perm[i].
std::vector<std::int64_t> assign_indices(std::size_t count, std::uint64_t seed);

/// Builds a dataset from in-memory images. All images must be RGB with the
/// same square shape; ids must be unique.
IndexImageDataset make_dataset(std::vector<Image> images, std::vector<std::string> ids, std::uint64_t seed);

/// Reads every *.png in a directory in file-name order.
IndexImageDataset prepare_dataset(const std::filesystem::path& image_dir, std::uint64_t seed);

/// CSV `image_id,filename,index`; filenames are written relative to the
/// manifest's directory when possible.
void write_manifest(const std::filesystem::path& path, const IndexImageDataset& dataset);
IndexImageDataset load_manifest(const std::filesystem::path& path);

/// Everything that shapes a training run.
struct CodecSetup {
  DenoiserConfig denoiser;  // num_images and latent_shape are filled in from the data
  ScheduleSpec schedule;
  TrainOptions train;
  std::uint64_t init_seed = 0;
  /// Target latent std after normalization; 0 disables normalization.
  double target_std = 1.0 / 3.0;
};

/// Sender-side state after training.
struct CodecModel {
  Denoiser denoiser;
  ScheduleSpec schedule;
  LatentNormalizer normalizer;
  LatentBackend backend;
  Shape3 image_shape{};
};

std::vector<Vector> encode_latents(const IndexImageDataset& dataset, const LatentBackend& backend);

/// Encodes, fits the normalizer and trains the denoiser on (latent, index).
CodecModel train_codec(const IndexImageDataset& dataset, LatentBackend backend, const CodecSetup& setup,
                       std::vector<EpochLog>* log = nullptr, const EpochCallback& on_epoch = {});

/// Checkpoint = model tensors, autoencoder tensors (prefixed "autoencoder.")
/// and the metadata needed to rebuild the model.
Checkpoint to_checkpoint(const CodecModel& model);
CodecModel from_checkpoint(const Checkpoint& checkpoint);

/// Quantizes the denoiser weights and assembles the archive.
Archive compress(const CodecModel& model, const QuantSpec& spec);

struct DecodeOptions {
  std::uint64_t seed = 0;
  SamplerKind sampler = SamplerKind::DDIM;
  double eta = 0.0;
};

/// Receiver: rebuilds the decoder from archive contents alone.
class Decoder {
 public:
  explicit Decoder(const Archive& archive, std::string external_decode_command = {});
  /// Unquantized decoder straight from the sender's model.
  explicit Decoder(const CodecModel& model);

  /// Initial noise comes from Rng(seed); per-step noise from
  /// Rng(mix_seed(seed, 1)). Throws OutOfRangeError when y is outside
  /// [0, M).
  [[nodiscard]] Image decode(std::int64_t y, const DecodeOptions& options = {}) const;
  [[nodiscard]] Tensor3 decode_latent(std::int64_t y, const DecodeOptions& options = {}) const;

  [[nodiscard]] std::int64_t num_images() const { return denoiser_.config().num_images; }
  [[nodiscard]] const Denoiser& denoiser() const { return denoiser_; }
  void set_scratch_dir(std::filesystem::path dir) { backend_.set_scratch_dir(std::move(dir)); }

 private:
  Denoiser denoiser_;
  NoiseSchedule schedule_;
  LatentNormalizer normalizer_;
  LatentBackend backend_;
  Shape3 image_shape_{};
};

/// Decompresses index y and writes an 8-bit PNG. Nothing is written when
/// decoding fails.
void decompress_to_png(const Decoder& decoder, std::int64_t y, const DecodeOptions& options,
                       const std::filesystem::path& out_png);

struct IndexResult {
  std::int64_t index = 0;
  std::string image_id;
  double mse = 0;
  double psnr = 0;
  std::int64_t nearest_index = -1;  // index of the closest source image
  bool matched = false;
  std::optional<double> external_score;
};

struct VerifyReport {
  std::vector<IndexResult> per_index;  // ordered by index
  std::int64_t matched = 0;
  double matching_accuracy = 0;
  double mean_psnr = 0;
  double mean_mse = 0;
  std::optional<DLReport> dl;
  double bpp = 0;
};

struct VerifyOptions {
  DecodeOptions decode;
  /// Receives two PNG paths (decoded, original) and prints one number.
  std::string scorer_command;
  std::filesystem::path scratch_dir;
};

/// Decodes every index, compares against the dataset on the 8-bit grid and
/// reports fidelity and identity matching. total_bits, when given, feeds bpp
/// and the description-length report.
VerifyReport verify(const Decoder& decoder, const IndexImageDataset& dataset, const VerifyOptions& options = {},
                    std::optional<std::int64_t> total_bits = std::nullopt);

/// Runs an external scorer: `command <a> <b>` must print a number.
double run_scorer(const std::string& command, const std::filesystem::path& a, const std::filesystem::path& b);

}  // namespace laduree
