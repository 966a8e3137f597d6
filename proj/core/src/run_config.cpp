#include "laduree/run_config.hpp"

#include "laduree/errors.hpp"
#include "text_util.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace laduree {

const std::vector<ConfigKey>& config_schema() {
  using T = ConfigType;
  static const std::vector<ConfigKey> schema = {
      {"run_name", T::String, "", "label for logs; empty derives <dataset>-H<hidden>-W<bits>", {}},
      {"image_dir", T::Path, "", "directory of PNG images (used when manifest is empty)", {}},
      {"manifest", T::Path, "", "dataset manifest CSV image_id,filename,index", {}},
      {"output_dir", T::Path, "run", "directory for checkpoint, archive and logs", {}},
      {"assignment_seed", T::UInt, "0", "seed of the index permutation", {}},
      {"init_seed", T::UInt, "0", "weight initialization seed", {}},
      {"data_seed", T::UInt, "0", "batch order seed", {}},
      {"noise_seed", T::UInt, "0", "training timestep/noise seed", {}},
      {"embed_seed", T::UInt, "0", "frozen frequency seed of GRF embeddings", {}},
      {"depth", T::Int, "6", "number of transformer blocks B", {}},
      {"hidden", T::Int, "96", "hidden size H", {}},
      {"num_heads", T::Int, "0", "attention heads; must divide hidden; 0 picks the divisor nearest hidden/12", {}},
      {"patch_size", T::Int, "2", "patch side p on the latent grid", {}},
      {"mlp_ratio", T::Real, "4", "feed-forward width as a multiple of hidden", {}},
      {"embedding", T::Choice, "GRF", "index embedding", {"GRF", "EDF", "LET", "MLP"}},
      {"conditioning", T::Choice, "CAG", "conditioning variant", {"ICC", "CA", "CAG", "ALNZ"}},
      {"steps", T::Int, "50", "diffusion timesteps T", {}},
      {"beta_start", T::Real, "0.0001", "beta at t = 1", {}},
      {"beta_end", T::Real, "0.02", "beta at t = T", {}},
      {"epochs", T::Int, "50", "training epochs", {}},
      {"lr", T::Real, "0.0002", "initial Adam learning rate", {}},
      {"halve_every", T::Int, "10", "epochs between learning-rate halvings", {}},
      {"batch_size", T::Int, "16", "samples per optimizer step", {}},
      {"repeats_per_epoch", T::Int, "1", "passes over the data per epoch", {}},
      {"target_std", T::Real, "0.3333333333333333", "latent std after normalization; 0 disables", {}},
      {"backend", T::Choice, "pixel", "latent backend", {"pixel", "autoencoder", "external"}},
      {"ae_channels", T::Int, "8", "autoencoder latent channels", {}},
      {"ae_hidden", T::Int, "64", "autoencoder hidden width", {}},
      {"ae_steps", T::Int, "3000", "autoencoder training steps", {}},
      {"ae_lr", T::Real, "0.003", "autoencoder learning rate", {}},
      {"external_dir", T::Path, "", "external latent store directory", {}},
      {"external_shape", T::String, "", "external latent shape c,h,w", {}},
      {"decode_command", T::String, "", "external decoder: <cmd> <latent file> <png>", {}},
      {"e_bits", T::Int, "5", "exponent bits of the weight format", {}},
      {"m_bits", T::Int, "10", "mantissa bits of the weight format", {}},
      {"sampler", T::Choice, "DDIM", "decode sampler", {"DDIM", "DDPM"}},
      {"eta", T::Real, "0", "DDIM stochasticity in [0, 1]", {}},
      {"decode_seed", T::UInt, "0", "decode noise seed", {}},
  };
  return schema;
}

namespace {

const ConfigKey* find_key(const std::string& name) {
  for (const auto& k : config_schema()) {
    if (k.name == name) return &k;
  }
  return nullptr;
}

std::string join_lines(const std::vector<std::string>& problems) {
  std::string msg = "invalid configuration (" + std::to_string(problems.size()) + " problem" +
                    (problems.size() == 1 ? "" : "s") + "):";
  for (const auto& p : problems) msg += "\n  " + p;
  return msg;
}

bool parse_int(const std::string& s, std::int64_t& out) {
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && p == end;
}

bool parse_uint(const std::string& s, std::uint64_t& out) {
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && p == end && !s.empty() && s[0] != '-';
}

bool parse_real(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size() && std::isfinite(out);
}

std::string check_value(const ConfigKey& key, const std::string& value) {
  switch (key.type) {
    case ConfigType::Int: {
      std::int64_t v;
      if (!parse_int(value, v)) return "expected an integer, got '" + value + "'";
      break;
    }
    case ConfigType::UInt: {
      std::uint64_t v;
      if (!parse_uint(value, v)) return "expected an unsigned integer, got '" + value + "'";
      break;
    }
    case ConfigType::Real: {
      double v;
      if (!parse_real(value, v)) return "expected a finite number, got '" + value + "'";
      break;
    }
    case ConfigType::Choice: {
      for (const auto& c : key.choices) {
        if (c == value) return {};
      }
      std::string allowed;
      for (const auto& c : key.choices) allowed += (allowed.empty() ? "" : "|") + c;
      return "expected one of " + allowed + ", got '" + value + "'";
    }
    case ConfigType::String:
    case ConfigType::Path: break;
  }
  return {};
}

std::string env_name(const std::string& key) {
  std::string out = "LADUREE_";
  for (char c : key) out += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : ValidationError(join_lines(problems)), problems_(std::move(problems)) {}

std::optional<std::string> process_env(const std::string& name) {
  if (const char* v = std::getenv(name.c_str())) return std::string(v);
  return std::nullopt;
}

RunConfig::RunConfig() {
  for (const auto& k : config_schema()) values_[k.name] = k.default_value;
}

void RunConfig::set_checked(const std::string& key, const std::string& value, const std::string& where,
                            std::vector<std::string>& problems) {
  const ConfigKey* k = find_key(key);
  if (k == nullptr) {
    problems.push_back(where + ": unknown key '" + key + "'");
    return;
  }
  if (auto err = check_value(*k, value); !err.empty()) {
    problems.push_back(where + ": " + key + ": " + err);
    return;
  }
  values_[key] = value;
}

RunConfig RunConfig::parse(std::string_view text, const std::vector<std::string>& overrides, const EnvLookup& env,
                           std::string_view source) {
  RunConfig cfg;
  std::vector<std::string> problems;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (detail::trim(line).empty()) continue;
    const std::string where = std::string(source) + ":" + std::to_string(lineno);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      problems.push_back(where + ": expected key = value");
      continue;
    }
    cfg.set_checked(detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)), where, problems);
  }
  if (env) {
    for (const auto& k : config_schema()) {
      const std::string name = env_name(k.name);
      if (auto v = env(name)) cfg.set_checked(k.name, detail::trim(*v), "environment " + name, problems);
    }
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) {
      problems.push_back("override '" + o + "': expected key=value");
      continue;
    }
    cfg.set_checked(detail::trim(o.substr(0, eq)), detail::trim(o.substr(eq + 1)), "override", problems);
  }
  cfg.validate(problems);  // rejected values were not stored, so typed reads are safe
  if (!problems.empty()) throw ConfigError(std::move(problems));
  return cfg;
}

RunConfig RunConfig::load(const std::optional<std::filesystem::path>& file, const std::vector<std::string>& overrides,
                          const EnvLookup& env) {
  std::string text;
  std::string source = "<defaults>";
  if (file) {
    std::ifstream in(*file);
    if (!in) throw ValidationError("cannot open config file " + file->string());
    std::ostringstream ss;
    ss << in.rdbuf();
    text = ss.str();
    source = file->string();
  }
  return parse(text, overrides, env, source);
}

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ValidationError("unknown config key '" + key + "'");
  return it->second;
}

std::int64_t RunConfig::get_int(const std::string& key) const {
  std::int64_t v = 0;
  if (!parse_int(get(key), v)) throw ValidationError(key + " is not an integer");
  return v;
}

std::uint64_t RunConfig::get_uint(const std::string& key) const {
  std::uint64_t v = 0;
  if (!parse_uint(get(key), v)) throw ValidationError(key + " is not an unsigned integer");
  return v;
}

double RunConfig::get_real(const std::string& key) const {
  double v = 0;
  if (!parse_real(get(key), v)) throw ValidationError(key + " is not a number");
  return v;
}

void RunConfig::validate(std::vector<std::string>& problems) const {
  auto positive = [&](const char* key) {
    if (get_int(key) < 1) problems.push_back(std::string(key) + " must be >= 1");
  };
  for (const char* key : {"depth", "hidden", "patch_size", "steps", "epochs", "halve_every",
                          "batch_size", "repeats_per_epoch", "ae_channels", "ae_hidden"}) {
    positive(key);
  }
  if (get_int("ae_steps") < 0) problems.push_back("ae_steps must be >= 0");
  if (get_int("num_heads") < 0) problems.push_back("num_heads must be >= 0");
  if (get_int("hidden") >= 1 && get_int("num_heads") >= 1 && get_int("hidden") % get_int("num_heads") != 0) {
    problems.push_back("num_heads must divide hidden");
  }
  if (get_int("hidden") % 2 != 0) problems.push_back("hidden must be even (sin/cos feature pairs)");
  if (get_real("mlp_ratio") <= 0) problems.push_back("mlp_ratio must be positive");
  const double b0 = get_real("beta_start"), b1 = get_real("beta_end");
  if (!(b0 > 0 && b0 <= b1 && b1 < 1)) problems.push_back("need 0 < beta_start <= beta_end < 1");
  if (get_real("lr") <= 0) problems.push_back("lr must be positive");
  if (get_real("ae_lr") <= 0) problems.push_back("ae_lr must be positive");
  if (get_real("target_std") < 0) problems.push_back("target_std must be >= 0");
  const double eta = get_real("eta");
  if (eta < 0 || eta > 1) problems.push_back("eta must lie in [0, 1]");
  try {
    quant_spec().validate();
  } catch (const ValidationError& e) {
    problems.push_back(e.what());
  }
  if (get("backend") == "external" && !get("external_shape").empty()) {
    const auto parts = detail::split_csv(get("external_shape"));
    std::int64_t v = 0;
    bool ok = parts.size() == 3;
    for (const auto& p : parts) ok = ok && parse_int(detail::trim(p), v) && v > 0;
    if (!ok) problems.push_back("external_shape must be c,h,w with positive integers");
  }
}

std::string RunConfig::run_name() const {
  if (!get("run_name").empty()) return get("run_name");
  std::string data = "data";
  if (!get("manifest").empty()) {
    data = std::filesystem::path(get("manifest")).stem().string();
  } else if (!get("image_dir").empty()) {
    data = std::filesystem::path(get("image_dir")).filename().string();
  }
  return data + "-H" + get("hidden") + "-W" + std::to_string(quant_spec().total_bits());
}

DenoiserConfig RunConfig::denoiser_config() const {
  DenoiserConfig c;
  c.depth = static_cast<int>(get_int("depth"));
  c.hidden = static_cast<int>(get_int("hidden"));
  c.num_heads = static_cast<int>(get_int("num_heads"));
  if (c.num_heads == 0) c.num_heads = default_num_heads(c.hidden);
  c.patch_size = static_cast<int>(get_int("patch_size"));
  c.mlp_ratio = get_real("mlp_ratio");
  c.embedding = parse_embedding_kind(get("embedding"));
  c.conditioning = parse_conditioning_kind(get("conditioning"));
  c.embed_seed = get_uint("embed_seed");
  return c;
}

ScheduleSpec RunConfig::schedule() const {
  return ScheduleSpec{static_cast<int>(get_int("steps")), get_real("beta_start"), get_real("beta_end")};
}

TrainOptions RunConfig::train_options() const {
  TrainOptions o;
  o.epochs = static_cast<int>(get_int("epochs"));
  o.lr = get_real("lr");
  o.halve_every = static_cast<int>(get_int("halve_every"));
  o.batch_size = static_cast<int>(get_int("batch_size"));
  o.repeats_per_epoch = static_cast<int>(get_int("repeats_per_epoch"));
  o.data_seed = get_uint("data_seed");
  o.noise_seed = get_uint("noise_seed");
  return o;
}

CodecSetup RunConfig::codec_setup() const {
  CodecSetup s;
  s.denoiser = denoiser_config();
  s.schedule = schedule();
  s.train = train_options();
  s.init_seed = get_uint("init_seed");
  s.target_std = get_real("target_std");
  return s;
}

QuantSpec RunConfig::quant_spec() const {
  return QuantSpec{static_cast<int>(get_int("e_bits")), static_cast<int>(get_int("m_bits"))};
}

DecodeOptions RunConfig::decode_options() const {
  return DecodeOptions{get_uint("decode_seed"), parse_sampler_kind(get("sampler")), get_real("eta")};
}

BackendKind RunConfig::backend() const { return parse_backend_kind(get("backend")); }

AutoencoderOptions RunConfig::autoencoder_options() const {
  AutoencoderOptions o;
  o.latent_channels = static_cast<int>(get_int("ae_channels"));
  o.hidden = static_cast<int>(get_int("ae_hidden"));
  o.steps = static_cast<int>(get_int("ae_steps"));
  o.lr = get_real("ae_lr");
  o.seed = get_uint("init_seed");
  return o;
}

std::string RunConfig::dump() const {
  std::string out;
  for (const auto& k : config_schema()) out += k.name + " = " + values_.at(k.name) + "\n";
  return out;
}

LatentBackend build_backend(const RunConfig& config, const IndexImageDataset& dataset) {
  switch (config.backend()) {
    case BackendKind::PixelIdentity: return LatentBackend::pixel_identity();
    case BackendKind::TinyAutoencoder: {
      const AutoencoderOptions o = config.autoencoder_options();
      TinyAutoencoder ae(o.latent_channels, o.hidden, o.seed);
      ae.train(dataset.images, o.steps, o.lr);
      return LatentBackend::tiny_autoencoder(std::move(ae));
    }
    case BackendKind::ExternalLatents: {
      if (config.get("external_dir").empty()) throw ValidationError("backend = external needs external_dir");
      ExternalLatentStore store(config.get("external_dir"));
      Shape3 shape;
      if (const auto& text = config.get("external_shape"); !text.empty()) {
        const auto parts = detail::split_csv(text);
        shape = Shape3{std::stoi(parts[0]), std::stoi(parts[1]), std::stoi(parts[2])};
      } else {
        shape = store.lookup(dataset.entries.front().image_id).shape;
      }
      return LatentBackend::external(std::move(store), config.get("decode_command"), shape);
    }
  }
  throw ValidationError("unknown backend");
}

}  // namespace laduree
