#include "laduree/codec.hpp"

#include "laduree/errors.hpp"
#include "laduree/image.hpp"
#include "laduree/rng.hpp"
#include "text_util.hpp"

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace laduree {

namespace fs = std::filesystem;

// Dataset ---------------------------------------------------------------------

std::size_t IndexImageDataset::position_of_index(std::int64_t y) const {
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].index == y) return i;
  }
  throw OutOfRangeError("index " + std::to_string(y) + " is not assigned in this dataset");
}

std::vector<std::int64_t> IndexImageDataset::indices() const {
  std::vector<std::int64_t> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.index);
  return out;
}

std::vector<std::int64_t> assign_indices(std::size_t count, std::uint64_t seed) {
  std::vector<std::int64_t> perm(count);
  std::iota(perm.begin(), perm.end(), std::int64_t{0});
  Rng rng(seed);
  rng.shuffle(std::span<std::int64_t>(perm));
  return perm;
}

namespace {

void check_images(const std::vector<Image>& images, const std::vector<std::string>& ids) {
  if (images.empty()) throw ValidationError("image set is empty");
  if (images.size() != ids.size()) throw ValidationError("images and ids differ in length");
  const Shape3 shape = images.front().shape;
  if (shape.channels != 3 || shape.height != shape.width || shape.height < 1) {
    throw ValidationError("images must be square RGB, got " + to_string(shape) + " for '" + ids.front() + "'");
  }
  std::set<std::string> seen;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (!(images[i].shape == shape)) {
      throw ValidationError("mixed image sizes: '" + ids[i] + "' is " + to_string(images[i].shape) + ", '" +
                            ids.front() + "' is " + to_string(shape));
    }
    if (ids[i].empty() || ids[i].find(',') != std::string::npos) {
      throw ValidationError("image id '" + ids[i] + "' is empty or contains a comma");
    }
    if (!seen.insert(ids[i]).second) throw ValidationError("duplicate image id '" + ids[i] + "'");
  }
}

}  // namespace

IndexImageDataset make_dataset(std::vector<Image> images, std::vector<std::string> ids, std::uint64_t seed) {
  check_images(images, ids);
  IndexImageDataset ds;
  ds.assignment_seed = seed;
  const auto perm = assign_indices(images.size(), seed);
  for (std::size_t i = 0; i < images.size(); ++i) {
    ds.entries.push_back(DatasetEntry{ids[i], ids[i] + ".png", perm[i]});
  }
  ds.images = std::move(images);
  return ds;
}

IndexImageDataset prepare_dataset(const fs::path& image_dir, std::uint64_t seed) {
  if (!fs::is_directory(image_dir)) throw ValidationError("not a directory: " + image_dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(image_dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png") files.push_back(entry.path());
  }
  if (files.empty()) throw ValidationError("no PNG images in " + image_dir.string());
  std::sort(files.begin(), files.end());
  std::vector<Image> images;
  std::vector<std::string> ids;
  for (const auto& f : files) {
    images.push_back(read_png(f));
    ids.push_back(f.stem().string());
  }
  IndexImageDataset ds = make_dataset(std::move(images), std::move(ids), seed);
  for (std::size_t i = 0; i < files.size(); ++i) ds.entries[i].filename = files[i];
  return ds;
}

void write_manifest(const fs::path& path, const IndexImageDataset& dataset) {
  const fs::path base = path.has_parent_path() ? path.parent_path() : fs::path(".");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw RuntimeError("cannot write " + path.string());
  out << "image_id,filename,index\n";
  for (const auto& e : dataset.entries) {
    std::error_code ec;
    fs::path rel = fs::relative(fs::absolute(e.filename), fs::absolute(base), ec);
    if (ec || rel.empty()) rel = fs::absolute(e.filename);
    const std::string name = rel.generic_string();
    if (name.find(',') != std::string::npos) throw ValidationError("file name contains a comma: " + name);
    out << e.image_id << ',' << name << ',' << e.index << '\n';
  }
  if (!out) throw RuntimeError("write failed for " + path.string());
}

IndexImageDataset load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw RuntimeError("cannot open manifest " + path.string());
  const fs::path base = path.has_parent_path() ? path.parent_path() : fs::path(".");
  std::string line;
  if (!std::getline(in, line) || detail::trim(line) != "image_id,filename,index") {
    throw CorruptInputError(path.string() + ": expected header image_id,filename,index");
  }
  IndexImageDataset ds;
  std::vector<std::string> ids;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (detail::trim(line).empty()) continue;
    const auto f = detail::split_csv(line);
    if (f.size() != 3) throw CorruptInputError(path.string() + ":" + std::to_string(row) + ": expected 3 fields");
    DatasetEntry e;
    e.image_id = f[0];
    e.filename = fs::path(f[1]).is_absolute() ? fs::path(f[1]) : base / f[1];
    try {
      std::size_t used = 0;
      e.index = std::stoll(f[2], &used);
      if (used != f[2].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw CorruptInputError(path.string() + ":" + std::to_string(row) + ": bad index '" + f[2] + "'");
    }
    ds.images.push_back(read_png(e.filename));
    ids.push_back(e.image_id);
    ds.entries.push_back(std::move(e));
  }
  check_images(ds.images, ids);
  std::vector<bool> seen(ds.entries.size(), false);
  for (const auto& e : ds.entries) {
    if (e.index < 0 || e.index >= static_cast<std::int64_t>(ds.entries.size()) || seen[static_cast<std::size_t>(e.index)]) {
      throw CorruptInputError(path.string() + ": indices are not a permutation of 0.." +
                              std::to_string(ds.entries.size() - 1));
    }
    seen[static_cast<std::size_t>(e.index)] = true;
  }
  return ds;
}

// Training --------------------------------------------------------------------

std::vector<Vector> encode_latents(const IndexImageDataset& dataset, const LatentBackend& backend) {
  std::vector<Vector> out;
  out.reserve(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    out.push_back(backend.encode(dataset.images[i], dataset.entries[i].image_id).values);
  }
  return out;
}

CodecModel train_codec(const IndexImageDataset& dataset, LatentBackend backend, const CodecSetup& setup,
                       std::vector<EpochLog>* log, const EpochCallback& on_epoch) {
  if (dataset.size() == 0) throw ValidationError("dataset is empty");
  CodecModel model;
  model.image_shape = dataset.image_shape();
  model.schedule = setup.schedule;
  model.backend = std::move(backend);

  std::vector<Vector> latents = encode_latents(dataset, model.backend);
  if (setup.target_std > 0.0) {
    model.normalizer = fit_normalizer(latents, setup.target_std);
  } else {
    model.normalizer = LatentNormalizer{1.0, 0.0};
  }
  for (auto& z : latents) z = model.normalizer.normalize(z);

  DenoiserConfig config = setup.denoiser;
  config.num_images = static_cast<std::int64_t>(dataset.size());
  config.latent_shape = model.backend.latent_shape(model.image_shape);
  model.denoiser = build_denoiser(config, setup.init_seed);

  const auto indices = dataset.indices();
  auto entries = train_denoiser(model.denoiser, latents, indices, model.schedule.build(), setup.train, on_epoch);
  if (log != nullptr) *log = std::move(entries);
  return model;
}

// Checkpoints -----------------------------------------------------------------

namespace {

constexpr const char* kAutoencoderPrefix = "autoencoder.";

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

const std::string& meta(const Checkpoint& ck, const std::string& key) {
  const auto it = ck.metadata.find(key);
  if (it == ck.metadata.end()) throw CorruptInputError("checkpoint metadata lacks '" + key + "'");
  return it->second;
}

long long meta_int(const Checkpoint& ck, const std::string& key) {
  const std::string& s = meta(ck, key);
  try {
    std::size_t used = 0;
    const long long v = std::stoll(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw CorruptInputError("checkpoint metadata '" + key + "' is not an integer: " + s);
}

unsigned long long meta_uint(const Checkpoint& ck, const std::string& key) {
  const std::string& s = meta(ck, key);
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw CorruptInputError("checkpoint metadata '" + key + "' is not an unsigned integer: " + s);
}

double meta_double(const Checkpoint& ck, const std::string& key) {
  const std::string& s = meta(ck, key);
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw CorruptInputError("checkpoint metadata '" + key + "' is not a number: " + s);
}

}  // namespace

Checkpoint to_checkpoint(const CodecModel& model) {
  const auto& c = model.denoiser.config();
  Checkpoint ck;
  auto& m = ck.metadata;
  m["format"] = "laduree-codec";
  m["num_images"] = std::to_string(c.num_images);
  m["image_side"] = std::to_string(model.image_shape.height);
  m["latent_channels"] = std::to_string(c.latent_shape.channels);
  m["latent_height"] = std::to_string(c.latent_shape.height);
  m["latent_width"] = std::to_string(c.latent_shape.width);
  m["depth"] = std::to_string(c.depth);
  m["hidden"] = std::to_string(c.hidden);
  m["num_heads"] = std::to_string(c.num_heads);
  m["patch_size"] = std::to_string(c.patch_size);
  m["mlp_ratio"] = fmt_double(c.mlp_ratio);
  m["embedding"] = std::string(to_string(c.embedding));
  m["conditioning"] = std::string(to_string(c.conditioning));
  m["embed_seed"] = std::to_string(c.embed_seed);
  m["steps"] = std::to_string(model.schedule.steps);
  m["beta_start"] = fmt_double(model.schedule.beta_start);
  m["beta_end"] = fmt_double(model.schedule.beta_end);
  m["normalizer_scale"] = fmt_double(model.normalizer.scale);
  m["target_std"] = fmt_double(model.normalizer.target_std);
  m["backend"] = std::string(to_string(model.backend.kind()));
  ck.tensors = model.denoiser.export_tensors();
  if (const auto* ae = model.backend.autoencoder()) {
    for (auto& t : ae->export_all()) ck.tensors.push_back(std::move(t));
  }
  return ck;
}

CodecModel from_checkpoint(const Checkpoint& ck) {
  if (meta(ck, "format") != "laduree-codec") throw CorruptInputError("not a codec checkpoint");
  CodecModel model;
  DenoiserConfig c;
  try {
    c.num_images = meta_int(ck, "num_images");
    c.latent_shape = Shape3{static_cast<int>(meta_int(ck, "latent_channels")),
                            static_cast<int>(meta_int(ck, "latent_height")),
                            static_cast<int>(meta_int(ck, "latent_width"))};
    c.depth = static_cast<int>(meta_int(ck, "depth"));
    c.hidden = static_cast<int>(meta_int(ck, "hidden"));
    c.num_heads = static_cast<int>(meta_int(ck, "num_heads"));
    c.patch_size = static_cast<int>(meta_int(ck, "patch_size"));
    c.mlp_ratio = meta_double(ck, "mlp_ratio");
    c.embedding = parse_embedding_kind(meta(ck, "embedding"));
    c.conditioning = parse_conditioning_kind(meta(ck, "conditioning"));
    c.embed_seed = meta_uint(ck, "embed_seed");
    c.validate();
  } catch (const ValidationError& e) {
    throw CorruptInputError(std::string("checkpoint config invalid: ") + e.what());
  }
  const int side = static_cast<int>(meta_int(ck, "image_side"));
  model.image_shape = Shape3{3, side, side};
  model.schedule = ScheduleSpec{static_cast<int>(meta_int(ck, "steps")), meta_double(ck, "beta_start"),
                                meta_double(ck, "beta_end")};
  model.normalizer = LatentNormalizer{meta_double(ck, "normalizer_scale"), meta_double(ck, "target_std")};

  TensorList denoiser_tensors;
  TensorList backend_tensors;
  for (const auto& t : ck.tensors) {
    (t.name.rfind(kAutoencoderPrefix, 0) == 0 ? backend_tensors : denoiser_tensors).push_back(t);
  }
  model.denoiser = Denoiser(c, 0);
  model.denoiser.import_tensors(denoiser_tensors);

  BackendKind kind;
  try {
    kind = parse_backend_kind(meta(ck, "backend"));
  } catch (const ValidationError& e) {
    throw CorruptInputError(e.what());
  }
  switch (kind) {
    case BackendKind::PixelIdentity: model.backend = LatentBackend::pixel_identity(); break;
    case BackendKind::TinyAutoencoder: {
      TinyAutoencoder ae;
      ae.import_all(backend_tensors);
      model.backend = LatentBackend::tiny_autoencoder(std::move(ae));
      break;
    }
    case BackendKind::ExternalLatents:
      model.backend = LatentBackend::external(std::nullopt, {}, c.latent_shape);
      break;
  }
  return model;
}

// Archive ---------------------------------------------------------------------

Archive compress(const CodecModel& model, const QuantSpec& spec) {
  const auto& c = model.denoiser.config();
  Archive a;
  a.header.num_images = static_cast<std::uint32_t>(c.num_images);
  a.header.image_side = static_cast<std::uint32_t>(model.image_shape.height);
  a.header.latent_shape = c.latent_shape;
  a.header.schedule = model.schedule;
  a.header.denoiser = c;
  a.header.backend = model.backend.kind();
  a.header.normalizer_scale = static_cast<float>(model.normalizer.scale);
  a.header.quant = spec;
  a.weights = quantize_model(model.denoiser.export_tensors(), spec).packed;
  if (const auto* ae = model.backend.autoencoder()) a.backend_tensors = ae->export_decoder();
  return a;
}

// Decoding --------------------------------------------------------------------

Decoder::Decoder(const Archive& archive, std::string external_decode_command) {
  const auto& h = archive.header;
  DenoiserConfig config = h.denoiser;
  config.num_images = h.num_images;
  config.latent_shape = h.latent_shape;
  denoiser_ = Denoiser(config, 0);
  denoiser_.import_tensors(dequantize_model(archive.weights));
  schedule_ = h.schedule.build();
  normalizer_ = LatentNormalizer{static_cast<double>(h.normalizer_scale), 0.0};
  image_shape_ = Shape3{3, static_cast<int>(h.image_side), static_cast<int>(h.image_side)};
  switch (h.backend) {
    case BackendKind::PixelIdentity: backend_ = LatentBackend::pixel_identity(); break;
    case BackendKind::TinyAutoencoder: {
      TinyAutoencoder ae;
      ae.import_decoder(archive.backend_tensors);
      backend_ = LatentBackend::tiny_autoencoder(std::move(ae));
      break;
    }
    case BackendKind::ExternalLatents:
      backend_ = LatentBackend::external(std::nullopt, std::move(external_decode_command), h.latent_shape);
      break;
  }
}

Decoder::Decoder(const CodecModel& model)
    : denoiser_(model.denoiser),
      schedule_(model.schedule.build()),
      normalizer_(model.normalizer),
      backend_(model.backend),
      image_shape_(model.image_shape) {}

Tensor3 Decoder::decode_latent(std::int64_t y, const DecodeOptions& options) const {
  if (y < 0 || y >= num_images()) {
    throw OutOfRangeError("index " + std::to_string(y) + " outside [0, " + std::to_string(num_images()) + ")");
  }
  const Shape3 shape = denoiser_.config().latent_shape;
  Vector noise(shape.numel());
  Rng rng(options.seed);
  rng.fill_normal(std::span<double>(noise.data(), static_cast<std::size_t>(noise.size())));
  const X0Predictor predict = [this](const Vector& x_t, int t, std::int64_t index) {
    return denoiser_.predict_x0(x_t, t, index);
  };
  SamplerOptions sampler{options.sampler, options.eta, mix_seed(options.seed, 1)};
  const Vector z = sample(predict, y, noise, schedule_, sampler);
  return Tensor3(shape, normalizer_.denormalize(z));
}

Image Decoder::decode(std::int64_t y, const DecodeOptions& options) const {
  return backend_.decode(decode_latent(y, options));
}

void decompress_to_png(const Decoder& decoder, std::int64_t y, const DecodeOptions& options, const fs::path& out_png) {
  const Image img = decoder.decode(y, options);
  write_png(out_png, img);
}

// Verification ----------------------------------------------------------------

double run_scorer(const std::string& command, const fs::path& a, const fs::path& b) {
  const std::string cmd = command + " " + detail::shell_quote(a.string()) + " " + detail::shell_quote(b.string());
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (pipe == nullptr) throw RuntimeError("cannot start scorer: " + cmd);
  std::string output;
  char buf[256];
  while (std::fgets(buf, sizeof buf, pipe) != nullptr) output += buf;
  const int status = ::pclose(pipe);
  if (status != 0) throw RuntimeError("scorer failed (status " + std::to_string(status) + "): " + cmd);
  const std::string text = detail::trim(output);
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (text.empty() || end != text.c_str() + text.size()) {
    throw RuntimeError("scorer printed '" + text + "', expected one number");
  }
  return v;
}

VerifyReport verify(const Decoder& decoder, const IndexImageDataset& dataset, const VerifyOptions& options,
                    std::optional<std::int64_t> total_bits) {
  const auto m = static_cast<std::int64_t>(dataset.size());
  if (m != decoder.num_images()) {
    throw ValidationError("dataset has " + std::to_string(m) + " images, archive was trained on " +
                          std::to_string(decoder.num_images()));
  }
  static std::atomic<int> counter{0};
  const fs::path scratch = options.scratch_dir.empty() ? fs::temp_directory_path() : options.scratch_dir;
  if (!options.scorer_command.empty()) fs::create_directories(scratch);
  VerifyReport report;
  double psnr_sum = 0.0, mse_sum = 0.0;
  for (std::int64_t y = 0; y < m; ++y) {
    const Image decoded = to_8bit_grid(decoder.decode(y, options.decode));
    const std::size_t pos = dataset.position_of_index(y);
    IndexResult r;
    r.index = y;
    r.image_id = dataset.entries[pos].image_id;
    r.mse = mse(decoded, dataset.images[pos]);
    r.psnr = psnr(decoded, dataset.images[pos]);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < dataset.size(); ++j) {
      const double d = mse(decoded, dataset.images[j]);
      if (d < best) {
        best = d;
        r.nearest_index = dataset.entries[j].index;
      }
    }
    r.matched = r.nearest_index == y;
    if (!options.scorer_command.empty()) {
      const std::string stem = "laduree-score-" + std::to_string(::getpid()) + "-" + std::to_string(counter++);
      const fs::path a = scratch / (stem + "-decoded.png");
      const fs::path b = scratch / (stem + "-original.png");
      write_png(a, decoded);
      write_png(b, dataset.images[pos]);
      try {
        r.external_score = run_scorer(options.scorer_command, a, b);
      } catch (...) {
        std::error_code ec;
        fs::remove(a, ec);
        fs::remove(b, ec);
        throw;
      }
      std::error_code ec;
      fs::remove(a, ec);
      fs::remove(b, ec);
    }
    report.matched += r.matched ? 1 : 0;
    psnr_sum += r.psnr;
    mse_sum += r.mse;
    report.per_index.push_back(std::move(r));
  }
  report.matching_accuracy = static_cast<double>(report.matched) / static_cast<double>(m);
  report.mean_psnr = psnr_sum / static_cast<double>(m);
  report.mean_mse = mse_sum / static_cast<double>(m);
  if (total_bits) {
    const Shape3 shape = dataset.image_shape();
    report.dl = dl_unicorn(m, static_cast<double>(*total_bits),
                           static_cast<std::int64_t>(shape.height) * shape.width);
    report.bpp = report.dl->bpp;
  }
  return report;
}

}  // namespace laduree
