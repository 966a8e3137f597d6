#include "laduree/latent_backend.hpp"

#include "laduree/checkpoint.hpp"
#include "laduree/denoiser.hpp"
#include "laduree/errors.hpp"
#include "laduree/image.hpp"
#include "text_util.hpp"

#include <unistd.h>

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>

namespace laduree {

LatentNormalizer fit_normalizer(std::span<const Vector> latents, double target_std) {
  if (!(target_std > 0.0)) throw ValidationError("target_std must be positive");
  std::int64_t n = 0;
  double sum = 0.0;
  for (const auto& z : latents) {
    n += z.size();
    sum += z.sum();
  }
  if (n == 0) throw DegenerateInputError("cannot fit a normalizer to an empty latent set");
  const double mean = sum / static_cast<double>(n);
  double sq = 0.0;
  for (const auto& z : latents) sq += (z.array() - mean).square().sum();
  const double std = std::sqrt(sq / static_cast<double>(n));
  if (!(std > 0.0) || !std::isfinite(std)) {
    throw DegenerateInputError("latents have zero variance; normalizer is undefined");
  }
  LatentNormalizer out;
  out.target_std = target_std;
  out.scale = static_cast<double>(static_cast<float>(target_std / std));
  return out;
}

std::string_view to_string(BackendKind kind) {
  switch (kind) {
    case BackendKind::PixelIdentity: return "pixel";
    case BackendKind::TinyAutoencoder: return "autoencoder";
    case BackendKind::ExternalLatents: return "external";
  }
  return "?";
}

BackendKind parse_backend_kind(std::string_view text) {
  if (text == "pixel") return BackendKind::PixelIdentity;
  if (text == "autoencoder") return BackendKind::TinyAutoencoder;
  if (text == "external") return BackendKind::ExternalLatents;
  throw ValidationError("unknown backend '" + std::string(text) + "' (expected pixel, autoencoder, external)");
}

// TinyAutoencoder ------------------------------------------------------------

namespace {

constexpr int kPatchValues = 3 * TinyAutoencoder::kPatch * TinyAutoencoder::kPatch;

Matrix image_patches(const Image& image) {
  if (image.shape.channels != 3 || image.shape.height % TinyAutoencoder::kPatch != 0 ||
      image.shape.width % TinyAutoencoder::kPatch != 0) {
    throw ValidationError("autoencoder needs RGB images with even sides, got " + to_string(image.shape));
  }
  return patchify(image.values, image.shape, TinyAutoencoder::kPatch);
}

}  // namespace

TinyAutoencoder::TinyAutoencoder(int latent_channels, int hidden, std::uint64_t init_seed)
    : latent_channels_(latent_channels), hidden_(hidden) {
  if (latent_channels < 1 || hidden < 1) throw ValidationError("autoencoder sizes must be positive");
  Rng rng(init_seed);
  enc1_ = Linear(kPatchValues, hidden, rng);
  enc2_ = Linear(hidden, latent_channels, rng);
  dec1_ = Linear(latent_channels, hidden, rng);
  dec2_ = Linear(hidden, kPatchValues, rng);
}

Var TinyAutoencoder::encode_tokens(Tape& tape, const Var& patches) const {
  return enc2_.forward(tape, ag::gelu(enc1_.forward(tape, patches)));
}

Var TinyAutoencoder::decode_tokens(Tape& tape, const Var& codes) const {
  return dec2_.forward(tape, ag::gelu(dec1_.forward(tape, codes)));
}

ParamList TinyAutoencoder::params(bool decoder_only) {
  ParamList out;
  dec1_.collect("autoencoder.dec1", out);
  dec2_.collect("autoencoder.dec2", out);
  if (!decoder_only) {
    enc1_.collect("autoencoder.enc1", out);
    enc2_.collect("autoencoder.enc2", out);
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  return out;
}

double TinyAutoencoder::train(std::span<const Image> images, int steps, double lr) {
  if (images.empty()) throw ValidationError("autoencoder training needs at least one image");
  if (latent_channels_ == 0) throw ValidationError("autoencoder is not initialized");
  std::vector<Matrix> blocks;
  Eigen::Index rows = 0;
  for (const auto& img : images) {
    blocks.push_back(image_patches(img));
    rows += blocks.back().rows();
  }
  Matrix all(rows, kPatchValues);
  Eigen::Index r = 0;
  for (const auto& b : blocks) {
    all.middleRows(r, b.rows()) = b;
    r += b.rows();
  }
  // Centre inputs on the mid-grey so the tanh-free layers start near zero.
  all.array() -= 0.5;
  const Matrix target = all;
  ParamList ps = params(false);
  Adam adam;
  double loss = 0.0;
  for (int step = 0; step < steps; ++step) {
    Tape tape;
    Var x = tape.constant(all);
    Var recon = decode_tokens(tape, encode_tokens(tape, x));
    Var l = ag::mse(recon, target);
    loss = l.value()(0, 0);
    if (!std::isfinite(loss)) throw TrainingDivergedError("autoencoder loss is not finite at step " + std::to_string(step));
    tape.backward(l);
    adam.step(ps, tape, lr);
  }
  return loss;
}

Shape3 TinyAutoencoder::latent_shape(const Shape3& image_shape) const {
  return Shape3{latent_channels_, image_shape.height / kPatch, image_shape.width / kPatch};
}

Tensor3 TinyAutoencoder::encode(const Image& image) const {
  Tape tape(false);
  Matrix patches = image_patches(image);
  patches.array() -= 0.5;
  Var codes = encode_tokens(tape, tape.constant(std::move(patches)));
  const Shape3 shape = latent_shape(image.shape);
  return Tensor3(shape, unpatchify(codes.value(), shape, 1));
}

Image TinyAutoencoder::decode(const Tensor3& latent) const {
  if (latent.shape.channels != latent_channels_) {
    throw ValidationError("latent has " + std::to_string(latent.shape.channels) + " channels, autoencoder expects " +
                          std::to_string(latent_channels_));
  }
  Tape tape(false);
  Var codes = tape.constant(patchify(latent.values, latent.shape, 1));
  Matrix patches = decode_tokens(tape, codes).value();
  patches.array() += 0.5;
  const Shape3 shape{3, latent.shape.height * kPatch, latent.shape.width * kPatch};
  Image out(shape, unpatchify(patches, shape, kPatch));
  out.values = out.values.cwiseMax(0.0).cwiseMin(1.0);
  return out;
}

namespace {

TensorList export_params(const ParamList& ps) {
  TensorList out;
  for (const auto& [name, p] : ps) {
    NamedTensor t{name, {p->value.rows(), p->value.cols()}, {}};
    t.data.resize(static_cast<std::size_t>(p->value.size()));
    for (Eigen::Index i = 0; i < p->value.size(); ++i) t.data[static_cast<std::size_t>(i)] = static_cast<float>(p->value.data()[i]);
    out.push_back(std::move(t));
  }
  return out;
}

void import_params(const ParamList& ps, const TensorList& tensors) {
  if (tensors.size() != ps.size()) throw CorruptInputError("autoencoder tensor count mismatch");
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto& [name, p] = ps[i];
    const auto& t = tensors[i];
    if (t.name != name || t.shape != std::vector<std::int64_t>{p->value.rows(), p->value.cols()}) {
      throw CorruptInputError("autoencoder tensor mismatch at '" + t.name + "' (expected '" + name + "')");
    }
    for (Eigen::Index j = 0; j < p->value.size(); ++j) p->value.data()[j] = t.data[static_cast<std::size_t>(j)];
  }
}

std::pair<int, int> infer_sizes(const TensorList& tensors) {
  for (const auto& t : tensors) {
    if (t.name == "autoencoder.dec1.weight" && t.shape.size() == 2) {
      return {static_cast<int>(t.shape[0]), static_cast<int>(t.shape[1])};
    }
  }
  throw CorruptInputError("autoencoder tensors lack autoencoder.dec1.weight");
}

}  // namespace

TensorList TinyAutoencoder::export_decoder() const {
  return export_params(const_cast<TinyAutoencoder*>(this)->params(true));
}

TensorList TinyAutoencoder::export_all() const {
  return export_params(const_cast<TinyAutoencoder*>(this)->params(false));
}

void TinyAutoencoder::import_decoder(const TensorList& tensors) {
  if (latent_channels_ == 0) {
    const auto [c, h] = infer_sizes(tensors);
    *this = TinyAutoencoder(c, h, 0);
  }
  import_params(params(true), tensors);
}

void TinyAutoencoder::import_all(const TensorList& tensors) {
  if (latent_channels_ == 0) {
    const auto [c, h] = infer_sizes(tensors);
    *this = TinyAutoencoder(c, h, 0);
  }
  import_params(params(false), tensors);
}

// External latents ------------------------------------------------------------

void write_latent_file(const std::filesystem::path& path, const Tensor3& latent) {
  Checkpoint ck;
  NamedTensor t{"latent", {latent.shape.channels, latent.shape.height, latent.shape.width}, {}};
  t.data.reserve(static_cast<std::size_t>(latent.values.size()));
  for (Eigen::Index i = 0; i < latent.values.size(); ++i) t.data.push_back(static_cast<float>(latent.values[i]));
  ck.tensors.push_back(std::move(t));
  write_checkpoint(path, ck);
}

Tensor3 read_latent_file(const std::filesystem::path& path) {
  const Checkpoint ck = read_checkpoint(path);
  for (const auto& t : ck.tensors) {
    if (t.name != "latent") continue;
    if (t.shape.size() != 3) throw CorruptInputError(path.string() + ": latent must have rank 3");
    Shape3 shape{static_cast<int>(t.shape[0]), static_cast<int>(t.shape[1]), static_cast<int>(t.shape[2])};
    Vector v(static_cast<Eigen::Index>(t.data.size()));
    for (std::size_t i = 0; i < t.data.size(); ++i) v[static_cast<Eigen::Index>(i)] = t.data[i];
    return Tensor3(shape, std::move(v));
  }
  throw CorruptInputError(path.string() + ": no tensor named 'latent'");
}

ExternalLatentStore::ExternalLatentStore(std::filesystem::path dir) : dir_(std::move(dir)) {
  const auto manifest = dir_ / "manifest.csv";
  std::ifstream in(manifest);
  if (!in) throw RuntimeError("cannot open " + manifest.string());
  std::string line;
  if (!std::getline(in, line) || detail::trim(line) != "image_id,filename") {
    throw CorruptInputError(manifest.string() + ": expected header image_id,filename");
  }
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_csv(line);
    if (fields.size() != 2) throw CorruptInputError(manifest.string() + ": malformed row '" + line + "'");
    files_[fields[0]] = fields[1];
  }
}

Tensor3 ExternalLatentStore::lookup(std::string_view image_id) const {
  const auto it = files_.find(image_id);
  if (it == files_.end()) throw LookupError("no external latent for image id '" + std::string(image_id) + "'");
  return read_latent_file(dir_ / it->second);
}

void ExternalLatentStore::write(const std::filesystem::path& dir, std::span<const std::string> ids,
                                std::span<const Tensor3> latents) {
  if (ids.size() != latents.size()) throw ValidationError("ids and latents differ in length");
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "manifest.csv", std::ios::trunc);
  if (!out) throw RuntimeError("cannot write " + (dir / "manifest.csv").string());
  out << "image_id,filename\n";
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i].find(',') != std::string::npos) throw ValidationError("image id contains a comma: " + ids[i]);
    const std::string file = ids[i] + ".ldck";
    write_latent_file(dir / file, latents[i]);
    out << ids[i] << ',' << file << '\n';
  }
}

// LatentBackend ---------------------------------------------------------------

LatentBackend LatentBackend::pixel_identity() { return LatentBackend(); }

LatentBackend LatentBackend::tiny_autoencoder(TinyAutoencoder autoencoder) {
  LatentBackend b;
  b.kind_ = BackendKind::TinyAutoencoder;
  b.autoencoder_ = std::move(autoencoder);
  return b;
}

LatentBackend LatentBackend::external(std::optional<ExternalLatentStore> store, std::string decode_command,
                                      Shape3 latent_shape) {
  LatentBackend b;
  b.kind_ = BackendKind::ExternalLatents;
  b.store_ = std::move(store);
  b.decode_command_ = std::move(decode_command);
  b.external_shape_ = latent_shape;
  return b;
}

Shape3 LatentBackend::latent_shape(const Shape3& image_shape) const {
  switch (kind_) {
    case BackendKind::PixelIdentity: return image_shape;
    case BackendKind::TinyAutoencoder: return autoencoder_->latent_shape(image_shape);
    case BackendKind::ExternalLatents: return external_shape_;
  }
  return image_shape;
}

Tensor3 LatentBackend::encode(const Image& image, std::string_view image_id) const {
  switch (kind_) {
    case BackendKind::PixelIdentity: {
      Tensor3 out(image.shape, (image.values.array() - 0.5) * 2.0);
      return out;
    }
    case BackendKind::TinyAutoencoder: return autoencoder_->encode(image);
    case BackendKind::ExternalLatents: {
      if (!store_) throw RuntimeError("external backend has no latent store to encode from");
      Tensor3 z = store_->lookup(image_id);
      if (!(z.shape == external_shape_)) {
        throw ValidationError("external latent for '" + std::string(image_id) + "' has shape " + to_string(z.shape) +
                              ", expected " + to_string(external_shape_));
      }
      return z;
    }
  }
  throw RuntimeError("unknown backend");
}

Image LatentBackend::decode(const Tensor3& latent) const {
  switch (kind_) {
    case BackendKind::PixelIdentity: {
      Image out(latent.shape, (latent.values.array() * 0.5 + 0.5).cwiseMax(0.0).cwiseMin(1.0).matrix());
      return out;
    }
    case BackendKind::TinyAutoencoder: return autoencoder_->decode(latent);
    case BackendKind::ExternalLatents: {
      if (decode_command_.empty()) throw RuntimeError("external backend needs a decode command");
      static std::atomic<int> counter{0};
      const auto dir = scratch_dir_.empty() ? std::filesystem::temp_directory_path() : scratch_dir_;
      const std::string stem = "laduree-" + std::to_string(::getpid()) + "-" + std::to_string(counter++);
      const auto latent_path = dir / (stem + ".ldck");
      const auto png_path = dir / (stem + ".png");
      write_latent_file(latent_path, latent);
      const std::string cmd =
          decode_command_ + " " + detail::shell_quote(latent_path.string()) + " " + detail::shell_quote(png_path.string());
      const int rc = std::system(cmd.c_str());
      std::error_code ec;
      std::filesystem::remove(latent_path, ec);
      if (rc != 0) {
        std::filesystem::remove(png_path, ec);
        throw RuntimeError("external decode command failed (status " + std::to_string(rc) + "): " + cmd);
      }
      Image out = read_png(png_path);
      std::filesystem::remove(png_path, ec);
      return out;
    }
  }
  throw RuntimeError("unknown backend");
}

}  // namespace laduree
