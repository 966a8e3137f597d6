#include "laduree/cli.hpp"

#include "laduree/ablation.hpp"
#include "laduree/archive.hpp"
#include "laduree/codec.hpp"
#include "laduree/dl_ledger.hpp"
#include "laduree/errors.hpp"
#include "laduree/image.hpp"
#include "laduree/run_config.hpp"
#include "laduree/toy_images.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

namespace laduree {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

/// JSON-lines sink: every event carries "event" and "command" first.
class EventLog {
 public:
  EventLog(std::ostream& out, std::string command) : out_(out), command_(std::move(command)) {}

  void emit(const std::string& event, json fields = json::object()) {
    json line = json::object();
    line["event"] = event;
    line["command"] = command_;
    for (auto& [k, v] : fields.items()) line[k] = v;
    const std::string text = line.dump();
    out_ << text << '\n';
    out_.flush();
    if (file_) {
      *file_ << text << '\n';
      file_->flush();
    }
  }

  void tee_to(const fs::path& path) {
    file_.emplace(path, std::ios::app);
    if (!*file_) throw RuntimeError("cannot write log " + path.string());
  }

 private:
  std::ostream& out_;
  std::string command_;
  std::optional<std::ofstream> file_;
};

/// Finite PSNR as a number, infinite as the string "inf".
json psnr_json(double db) { return std::isinf(db) ? json("inf") : json(db); }

json dl_json(const DLReport& r) {
  return json{{"scheme", std::string(to_string(r.scheme))},
              {"label", r.label},
              {"num_images", r.num_images},
              {"pixels_per_image", r.pixels_per_image},
              {"index_bits", r.index_or_code_bits},
              {"model_bits", r.model_bits},
              {"total_bits", r.total_bits},
              {"bpp", r.bpp},
              {"compression_ratio", r.compression_ratio}};
}

IndexImageDataset load_dataset_for(const RunConfig& cfg) {
  if (!cfg.get("manifest").empty()) return load_manifest(cfg.get("manifest"));
  if (!cfg.get("image_dir").empty()) return prepare_dataset(cfg.get("image_dir"), cfg.get_uint("assignment_seed"));
  throw ValidationError("config needs manifest or image_dir");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw RuntimeError("cannot write " + path.string());
  out << text;
  if (!out) throw RuntimeError("write failed for " + path.string());
}

/// Writes to a sibling temp file first so a failed command leaves no
/// partial output at `path`.
void write_png_atomic(const fs::path& path, const Image& image) {
  const fs::path tmp = path.string() + ".partial";
  write_png(tmp, image);
  fs::rename(tmp, path);
}

// Commands ----------------------------------------------------------------------

struct PrepareArgs {
  std::string image_dir, manifest;
  std::uint64_t seed = 0;
};

int cmd_prepare(const PrepareArgs& a, EventLog& log) {
  const IndexImageDataset ds = prepare_dataset(a.image_dir, a.seed);
  write_manifest(a.manifest, ds);
  log.emit("prepared", {{"images", ds.size()},
                        {"seed", a.seed},
                        {"image_shape", to_string(ds.image_shape())},
                        {"manifest", a.manifest}});
  return kExitOk;
}

struct TrainArgs {
  std::string config;
  std::vector<std::string> overrides;
};

int cmd_train(const TrainArgs& a, EventLog& log) {
  const RunConfig cfg = RunConfig::load(a.config.empty() ? std::nullopt : std::optional<fs::path>(a.config), a.overrides);
  const fs::path out_dir = cfg.get("output_dir");
  fs::create_directories(out_dir);
  log.tee_to(out_dir / "train.jsonl");
  write_text(out_dir / "config.resolved", cfg.dump());
  const IndexImageDataset ds = load_dataset_for(cfg);
  if (cfg.get("manifest").empty()) write_manifest(out_dir / "manifest.csv", ds);
  log.emit("start", {{"run_name", cfg.run_name()},
                     {"images", ds.size()},
                     {"image_shape", to_string(ds.image_shape())},
                     {"backend", cfg.get("backend")}});

  LatentBackend backend = build_backend(cfg, ds);
  if (const auto* ae = backend.autoencoder()) {
    double sum = 0;
    for (const auto& img : ds.images) sum += psnr(to_8bit_grid(ae->decode(ae->encode(img))), img);
    log.emit("autoencoder", {{"mean_psnr", psnr_json(sum / static_cast<double>(ds.size()))},
                             {"latent_shape", to_string(ae->latent_shape(ds.image_shape()))}});
  }
  const CodecSetup setup = cfg.codec_setup();
  std::vector<EpochLog> epochs;
  const CodecModel model = train_codec(ds, std::move(backend), setup, &epochs, [&](const EpochLog& e) {
    log.emit("epoch", {{"epoch", e.epoch}, {"lr", e.lr}, {"mean_loss", e.mean_loss}, {"steps", e.steps}, {"seconds", e.seconds}});
  });
  write_loss_csv(out_dir / "loss.csv", epochs);
  const fs::path ckpt = out_dir / "checkpoint.ldck";
  write_checkpoint(ckpt, to_checkpoint(model));
  log.emit("done", {{"checkpoint", ckpt.string()},
                    {"trainable_params", model.denoiser.trainable_count()},
                    {"normalizer_scale", model.normalizer.scale},
                    {"final_loss", epochs.empty() ? json(nullptr) : json(epochs.back().mean_loss)}});
  return kExitOk;
}

struct PackArgs {
  std::string checkpoint, archive;
  int e_bits = 5, m_bits = 10;
};

int cmd_pack(const PackArgs& a, EventLog& log) {
  const QuantSpec spec{a.e_bits, a.m_bits};
  spec.validate();
  const CodecModel model = from_checkpoint(read_checkpoint(a.checkpoint));
  const Archive archive = compress(model, spec);
  write_archive(a.archive, archive);
  const ArchiveBits bits = archive_bits(archive);
  const auto& c = model.denoiser.config();
  const DLReport dl = dl_unicorn(c.num_images, static_cast<double>(bits.total_bits),
                                 static_cast<std::int64_t>(model.image_shape.height) * model.image_shape.width);
  log.emit("packed", {{"archive", a.archive},
                      {"e_bits", spec.e_bits},
                      {"m_bits", spec.m_bits},
                      {"parameters", archive.weights.num_values},
                      {"model_bits", archive.weights.model_bits()},
                      {"blob_bits", bits.blob_bits},
                      {"header_bits", bits.header_bits},
                      {"total_bits", bits.total_bits},
                      {"dl", dl_json(dl)}});
  return kExitOk;
}

struct DecodeArgs {
  std::string archive, out_png, sampler = "DDIM", decode_command;
  std::int64_t index = -1;
  std::uint64_t seed = 0;
  double eta = 0.0;
};

int cmd_decode(const DecodeArgs& a, EventLog& log) {
  const Archive archive = read_archive(a.archive);
  Decoder decoder(archive, a.decode_command);
  const fs::path out = a.out_png;
  decoder.set_scratch_dir(out.has_parent_path() ? out.parent_path() : fs::path("."));
  const DecodeOptions opts{a.seed, parse_sampler_kind(a.sampler), a.eta};
  const Image img = decoder.decode(a.index, opts);
  write_png_atomic(out, img);
  log.emit("decoded", {{"archive", a.archive}, {"index", a.index}, {"seed", a.seed}, {"sampler", a.sampler}, {"eta", a.eta}, {"png", a.out_png}});
  return kExitOk;
}

struct VerifyArgs {
  std::string archive, manifest, csv, scorer, sampler = "DDIM", decode_command;
  std::uint64_t seed = 0;
  double eta = 0.0;
};

int cmd_verify(const VerifyArgs& a, EventLog& log) {
  const Archive archive = read_archive(a.archive);
  const ArchiveBits bits = archive_bits(archive);
  const IndexImageDataset ds = load_manifest(a.manifest);
  Decoder decoder(archive, a.decode_command);
  VerifyOptions vo;
  vo.decode = DecodeOptions{a.seed, parse_sampler_kind(a.sampler), a.eta};
  vo.scorer_command = a.scorer;
  const VerifyReport r = verify(decoder, ds, vo, bits.total_bits);
  for (const auto& row : r.per_index) {
    json fields{{"index", row.index}, {"image_id", row.image_id}, {"mse", row.mse}, {"psnr", psnr_json(row.psnr)},
                {"nearest_index", row.nearest_index}, {"matched", row.matched}};
    if (row.external_score) fields["external_score"] = *row.external_score;
    log.emit("index", std::move(fields));
  }
  if (!a.csv.empty()) {
    std::ofstream csv(a.csv, std::ios::trunc);
    if (!csv) throw RuntimeError("cannot write " + a.csv);
    csv << "index,image_id,mse,psnr,nearest_index,matched" << (a.scorer.empty() ? "" : ",external_score") << '\n';
    csv << std::setprecision(10);
    for (const auto& row : r.per_index) {
      csv << row.index << ',' << row.image_id << ',' << row.mse << ',' << format_psnr(row.psnr) << ','
          << row.nearest_index << ',' << (row.matched ? 1 : 0);
      if (row.external_score) csv << ',' << *row.external_score;
      csv << '\n';
    }
  }
  log.emit("summary", {{"images", ds.size()},
                       {"matched", r.matched},
                       {"matching_accuracy", r.matching_accuracy},
                       {"mean_psnr", psnr_json(r.mean_psnr)},
                       {"mean_mse", r.mean_mse},
                       {"total_bits", bits.total_bits},
                       {"bpp", r.bpp},
                       {"dl", dl_json(*r.dl)}});
  return kExitOk;
}

struct ReportArgs {
  std::vector<std::string> inputs;
  std::string out;
  std::int64_t pixels = 0;
};

int cmd_report(const ReportArgs& a, EventLog& log) {
  std::vector<DLReport> reports;
  std::vector<std::string> baselines;
  std::int64_t pixels = a.pixels;
  for (const auto& input : a.inputs) {
    if (fs::path(input).extension() == ".csv") {
      baselines.push_back(input);
      continue;
    }
    const Archive archive = read_archive(input);
    const ArchiveBits bits = archive_bits(archive);
    const std::int64_t side = archive.header.image_side;
    if (pixels == 0) pixels = side * side;
    DLReport r = dl_unicorn(archive.header.num_images, static_cast<double>(bits.total_bits), side * side);
    r.label = fs::path(input).filename().string();
    reports.push_back(std::move(r));
  }
  if (pixels == 0) pixels = kDefaultPixelsPerImage;
  for (const auto& file : baselines) {
    std::ifstream in(file);
    if (!in) throw RuntimeError("cannot open " + file);
    for (auto& r : baseline_reports(read_baseline_csv(in), pixels)) reports.push_back(std::move(r));
  }
  if (reports.empty()) throw ValidationError("report needs at least one archive or baseline CSV");
  const double raw = kRawBitsPerPixel * static_cast<double>(pixels);
  const auto rows = comparison_report(reports, raw);
  std::ostringstream csv;
  csv << "scheme,label,M,total_bits,file_size_bytes,compression_ratio,bpp,online_bits_ideal,online_bits_fixed\n";
  csv << std::setprecision(12);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = reports[i];
    json fields = dl_json(r);
    fields["file_size_bytes"] = rows[i].file_size_bytes;
    std::string online_ideal, online_fixed;
    if (r.scheme == Scheme::Unicorn) {
      const OnlineBits ob = per_image_online_bits(r.num_images);
      fields["online_bits_ideal"] = ob.ideal;
      fields["online_bits_fixed"] = ob.fixed_length;
      std::ostringstream ideal;
      ideal << std::setprecision(12) << ob.ideal;
      online_ideal = ideal.str();
      online_fixed = std::to_string(ob.fixed_length);
    }
    log.emit("row", std::move(fields));
    csv << to_string(r.scheme) << ',' << rows[i].scheme << ',' << r.num_images << ',' << r.total_bits << ','
        << rows[i].file_size_bytes << ',' << rows[i].compression_ratio << ',' << r.bpp << ',' << online_ideal << ','
        << online_fixed << '\n';
  }
  if (!a.out.empty()) write_text(a.out, csv.str());
  return kExitOk;
}

struct AblateArgs {
  std::string config, axis, out;
  std::vector<std::string> values, overrides;
};

int cmd_ablate(const AblateArgs& a, EventLog& log) {
  const RunConfig cfg = RunConfig::load(a.config.empty() ? std::nullopt : std::optional<fs::path>(a.config), a.overrides);
  const AblationAxis axis = parse_ablation_axis(a.axis);
  for (const auto& v : a.values) {
    // Reject malformed values before any training starts.
    std::vector<std::string> all;
    for (const auto& [k, val] : cfg.values()) all.push_back(k + "=" + val);
    for (auto& o : ablation_overrides(axis, v)) all.push_back(std::move(o));
    (void)RunConfig::parse("", all, nullptr, "--values");
  }
  const IndexImageDataset ds = load_dataset_for(cfg);
  const auto rows = run_ablation(cfg, ds, axis, a.values, [&](const AblationRow& r) {
    log.emit("run", {{"axis", r.axis}, {"value", r.value}, {"trainable_params", r.trainable_params},
                     {"component_params", r.component_params}, {"model_bits", r.model_bits},
                     {"total_bits", r.total_bits}, {"bpp", r.bpp}, {"mean_psnr", psnr_json(r.mean_psnr)},
                     {"matching_accuracy", r.matching_accuracy}, {"failure", r.failure}});
  });
  std::ostringstream csv;
  write_ablation_csv(csv, rows);
  if (!a.out.empty()) write_text(a.out, csv.str());
  std::size_t failed = 0;
  for (const auto& r : rows) failed += r.failure.empty() ? 0 : 1;
  log.emit("summary", {{"runs", rows.size()}, {"failed", failed}, {"csv", a.out}});
  return failed == 0 ? kExitOk : kExitRuntime;
}

struct SynthArgs {
  std::string out_dir;
  int count = 16, side = 32;
  std::uint64_t seed = 0;
};

int cmd_synth(const SynthArgs& a, EventLog& log) {
  const auto images = make_toy_images(a.count, a.side, a.seed);
  fs::create_directories(a.out_dir);
  for (std::size_t i = 0; i < images.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "toy_%03zu.png", i);
    write_png(fs::path(a.out_dir) / name, images[i]);
  }
  log.emit("synthesized", {{"count", a.count}, {"side", a.side}, {"seed", a.seed}, {"dir", a.out_dir}});
  return kExitOk;
}

int cmd_latent_to_png(const std::string& latent, const std::string& png, EventLog& log) {
  const Tensor3 z = read_latent_file(latent);
  if (z.shape.channels != 3) throw ValidationError("latent-to-png expects 3 channels, got " + to_string(z.shape));
  write_png_atomic(png, LatentBackend::pixel_identity().decode(z));
  log.emit("converted", {{"latent", latent}, {"png", png}});
  return kExitOk;
}

int cmd_export_latents(const std::string& manifest, const std::string& out_dir, EventLog& log) {
  const IndexImageDataset ds = load_manifest(manifest);
  const LatentBackend pixel = LatentBackend::pixel_identity();
  std::vector<std::string> ids;
  std::vector<Tensor3> latents;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    ids.push_back(ds.entries[i].image_id);
    latents.push_back(pixel.encode(ds.images[i], ids.back()));
  }
  ExternalLatentStore::write(out_dir, ids, latents);
  log.emit("exported", {{"images", ds.size()}, {"dir", out_dir}});
  return kExitOk;
}

int cmd_config(const std::string& file, const std::vector<std::string>& overrides, bool list, std::ostream& out) {
  if (list) {
    for (const auto& k : config_schema()) {
      json line{{"key", k.name}, {"default", k.default_value}, {"description", k.description}};
      if (!k.choices.empty()) line["choices"] = k.choices;
      out << line.dump() << '\n';
    }
    return kExitOk;
  }
  const RunConfig cfg = RunConfig::load(file.empty() ? std::nullopt : std::optional<fs::path>(file), overrides);
  out << cfg.dump();
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Index-conditioned diffusion codec for closed image sets", "laduree"};
  app.require_subcommand(1);

  PrepareArgs prepare;
  auto* sp = app.add_subcommand("prepare", "Assign random indices to a directory of PNG images");
  sp->add_option("image_dir", prepare.image_dir)->required();
  sp->add_option("out_manifest", prepare.manifest)->required();
  sp->add_option("--seed", prepare.seed, "Permutation seed");

  TrainArgs train;
  auto* st = app.add_subcommand("train", "Train a codec model from a config file");
  st->add_option("config", train.config, "Config file (key = value lines)");
  st->add_option("--set", train.overrides, "Override key=value (repeatable)");

  PackArgs pack;
  auto* spk = app.add_subcommand("pack", "Quantize a checkpoint into an archive");
  spk->add_option("checkpoint", pack.checkpoint)->required();
  spk->add_option("out_archive", pack.archive)->required();
  spk->add_option("--e", pack.e_bits, "Exponent bits");
  spk->add_option("--m", pack.m_bits, "Mantissa bits");

  DecodeArgs decode;
  auto* sd = app.add_subcommand("decode", "Decompress one image from an archive");
  sd->add_option("archive", decode.archive)->required();
  sd->add_option("out_png", decode.out_png)->required();
  sd->add_option("--index", decode.index, "Image index")->required();
  sd->add_option("--seed", decode.seed, "Noise seed");
  sd->add_option("--sampler", decode.sampler, "DDIM or DDPM");
  sd->add_option("--eta", decode.eta, "DDIM eta");
  sd->add_option("--decode-command", decode.decode_command, "External latent decoder");

  VerifyArgs ver;
  auto* sv = app.add_subcommand("verify", "Decode every index and compare with the source images");
  sv->add_option("archive", ver.archive)->required();
  sv->add_option("manifest", ver.manifest)->required();
  sv->add_option("--csv", ver.csv, "Per-index CSV output");
  sv->add_option("--scorer", ver.scorer, "External scorer command");
  sv->add_option("--seed", ver.seed, "Noise seed");
  sv->add_option("--sampler", ver.sampler, "DDIM or DDPM");
  sv->add_option("--eta", ver.eta, "DDIM eta");
  sv->add_option("--decode-command", ver.decode_command, "External latent decoder");

  ReportArgs report;
  auto* sr = app.add_subcommand("report", "Description-length comparison of archives and baseline CSVs");
  sr->add_option("inputs", report.inputs, "Archives and baseline CSV files")->required();
  sr->add_option("--out", report.out, "CSV output");
  sr->add_option("--pixels", report.pixels, "Pixels per image for baselines");

  AblateArgs ablate;
  auto* sa = app.add_subcommand("ablate", "Train and evaluate one run per axis value");
  sa->add_option("config", ablate.config, "Base config file");
  sa->add_option("--axis", ablate.axis, "embedding|conditioning|quantization|normalization")->required();
  sa->add_option("--values", ablate.values, "Axis values")->required();
  sa->add_option("--out", ablate.out, "CSV output");
  sa->add_option("--set", ablate.overrides, "Override key=value (repeatable)");

  SynthArgs synth;
  auto* ss = app.add_subcommand("synth", "Write synthetic toy PNG images");
  ss->add_option("out_dir", synth.out_dir)->required();
  ss->add_option("--count", synth.count);
  ss->add_option("--side", synth.side);
  ss->add_option("--seed", synth.seed);

  std::string latent_in, png_out;
  auto* sl = app.add_subcommand("latent-to-png", "Decode a [-1, 1] RGB latent file to PNG");
  sl->add_option("latent", latent_in)->required();
  sl->add_option("out_png", png_out)->required();

  std::string export_manifest, export_dir;
  auto* se = app.add_subcommand("export-latents", "Write pixel latents of a dataset as an external latent store");
  se->add_option("manifest", export_manifest)->required();
  se->add_option("out_dir", export_dir)->required();

  std::string config_file;
  std::vector<std::string> config_overrides;
  bool list_keys = false;
  auto* sc = app.add_subcommand("config", "Print the resolved configuration");
  sc->add_option("config", config_file);
  sc->add_option("--set", config_overrides);
  sc->add_flag("--list", list_keys, "List every key with its default");

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "laduree: " << e.what() << '\n';
    return kExitValidation;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  EventLog log(out, name);
  try {
    if (*sp) return cmd_prepare(prepare, log);
    if (*st) return cmd_train(train, log);
    if (*spk) return cmd_pack(pack, log);
    if (*sd) return cmd_decode(decode, log);
    if (*sv) return cmd_verify(ver, log);
    if (*sr) return cmd_report(report, log);
    if (*sa) return cmd_ablate(ablate, log);
    if (*ss) return cmd_synth(synth, log);
    if (*sl) return cmd_latent_to_png(latent_in, png_out, log);
    if (*se) return cmd_export_latents(export_manifest, export_dir, log);
    if (*sc) return cmd_config(config_file, config_overrides, list_keys, out);
  } catch (const ValidationError& e) {
    err << "laduree " << name << ": " << e.what() << '\n';
    return kExitValidation;
  } catch (const CorruptInputError& e) {
    err << "laduree " << name << ": corrupt input: " << e.what() << '\n';
    return kExitCorrupt;
  } catch (const std::exception& e) {
    err << "laduree " << name << ": " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitValidation;
}

}  // namespace laduree
