#pragma once

#include "laduree/codec.hpp"
#include "laduree/errors.hpp"
#include "laduree/latent_backend.hpp"
#include "laduree/quantizer.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace laduree {

enum class ConfigType { Int, UInt, Real, String, Path, Choice };

struct ConfigKey {
  std::string name;
  ConfigType type;
  std::string default_value;
  std::string description;
  std::vector<std::string> choices;  // Choice only
};

/// Every recognised key with its type, default and meaning.
const std::vector<ConfigKey>& config_schema();

/// Thrown when any value fails to parse or validate; the message lists all
/// problems, one per line.
class ConfigError : public ValidationError {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  [[nodiscard]] const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

/// Process environment lookup.
std::optional<std::string> process_env(const std::string& name);

/// Flat typed run configuration.
///
/// Precedence, lowest first: built-in defaults, the config file, environment
/// variables LADUREE_<KEY> (key upper-cased), then explicit overrides.
/// Files hold `key = value` lines; `#` starts a comment.
class RunConfig {
 public:
  RunConfig();

  static RunConfig load(const std::optional<std::filesystem::path>& file,
                        const std::vector<std::string>& overrides = {}, const EnvLookup& env = process_env);
  static RunConfig parse(std::string_view text, const std::vector<std::string>& overrides = {},
                         const EnvLookup& env = process_env, std::string_view source = "<config>");

  [[nodiscard]] const std::string& get(const std::string& key) const;
  [[nodiscard]] std::int64_t get_int(const std::string& key) const;
  [[nodiscard]] std::uint64_t get_uint(const std::string& key) const;
  [[nodiscard]] double get_real(const std::string& key) const;

  [[nodiscard]] std::string run_name() const;
  [[nodiscard]] DenoiserConfig denoiser_config() const;
  [[nodiscard]] ScheduleSpec schedule() const;
  [[nodiscard]] TrainOptions train_options() const;
  [[nodiscard]] CodecSetup codec_setup() const;
  [[nodiscard]] QuantSpec quant_spec() const;
  [[nodiscard]] DecodeOptions decode_options() const;
  [[nodiscard]] BackendKind backend() const;
  [[nodiscard]] AutoencoderOptions autoencoder_options() const;

  /// Resolved `key = value` document, keys in schema order.
  [[nodiscard]] std::string dump() const;
  [[nodiscard]] const std::map<std::string, std::string>& values() const { return values_; }

 private:
  void set_checked(const std::string& key, const std::string& value, const std::string& where,
                   std::vector<std::string>& problems);
  void validate(std::vector<std::string>& problems) const;

  std::map<std::string, std::string> values_;
};

/// Constructs the configured backend; trains the autoencoder on the dataset
/// or opens the external latent store as needed.
LatentBackend build_backend(const RunConfig& config, const IndexImageDataset& dataset);

}  // namespace laduree
