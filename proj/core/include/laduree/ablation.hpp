#pragma once

#include "laduree/codec.hpp"
#include "laduree/run_config.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace laduree {

enum class AblationAxis { Embedding, Conditioning, Quantization, Normalization };

std::string_view to_string(AblationAxis axis);
AblationAxis parse_ablation_axis(std::string_view text);

/// Config overrides for one axis value. Quantization values are `E,M` or a
/// bare `M` (exponent bits from the base config); normalization values are
/// target standard deviations (0 disables normalization).
std::vector<std::string> ablation_overrides(AblationAxis axis, const std::string& value);

struct AblationRow {
  std::string axis;
  std::string value;
  std::int64_t trainable_params = 0;  // whole denoiser
  std::int64_t component_params = 0;  // the part the axis varies
  std::int64_t model_bits = 0;        // num_values * (1 + e + m)
  std::int64_t total_bits = 0;        // archive file bits
  double bpp = 0;
  double mean_psnr = 0;
  double matching_accuracy = 0;
  std::string failure;  // empty on success
};

/// Trainable parameters of the varied component: the index embedder for
/// the embedding axis, B times the per-block extra for conditioning, the
/// whole denoiser otherwise.
std::int64_t component_param_count(AblationAxis axis, const DenoiserConfig& config);

using AblationProgress = std::function<void(const AblationRow&)>;

/// One run per value with everything else fixed. Quantization values share
/// one trained model since training does not depend on them. A failing run
/// yields a row with `failure` set; the others still run.
std::vector<AblationRow> run_ablation(const RunConfig& base, const IndexImageDataset& dataset, AblationAxis axis,
                                      const std::vector<std::string>& values, const AblationProgress& progress = {});

/// Header: axis,value,trainable_params,component_params,model_bits,total_bits,
/// bpp,mean_psnr,matching_accuracy,failure
void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows);

}  // namespace laduree
