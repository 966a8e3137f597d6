#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace laduree {

enum class Scheme { Unicorn, EIC, IIC };

std::string_view to_string(Scheme scheme);

/// Description length of a compressed image set. Bits are real-valued
/// (idealized code lengths); only file sizes round up to bytes.
struct DLReport {
  Scheme scheme = Scheme::Unicorn;
  std::string label;              // e.g. "Laduree", "ELIC"
  std::int64_t num_images = 0;    // M
  std::int64_t pixels_per_image = 0;
  double index_or_code_bits = 0;  // first term
  double model_bits = 0;          // decoder complexity term
  double total_bits = 0;
  double bpp = 0;
  double compression_ratio = 0;   // raw bits / total bits
};

inline constexpr std::int64_t kDefaultPixelsPerImage = 256 * 256;
inline constexpr double kRawBitsPerPixel = 24.0;

/// M log2 M + model_bits.
DLReport dl_unicorn(std::int64_t num_images, double model_bits,
                    std::int64_t pixels_per_image = kDefaultPixelsPerImage);

struct OnlineBits {
  double ideal = 0;           // log2 M
  std::int64_t fixed_length = 0;  // ceil(log2 M)
};

/// Per-image transmission cost once the decoder is shared.
OnlineBits per_image_online_bits(std::int64_t num_images);

/// Sum of per-image bitstream lengths + one shared decoder.
DLReport dl_eic(std::span<const double> per_image_code_bits, double decoder_bits,
                std::int64_t pixels_per_image = kDefaultPixelsPerImage);

/// Sum of per-image NLL bits + one dedicated model per image.
DLReport dl_iic(std::span<const double> per_image_nll_bits, std::span<const double> per_model_bits,
                std::int64_t pixels_per_image = kDefaultPixelsPerImage);

struct ComparisonRow {
  std::string scheme;
  std::int64_t num_images = 0;
  double total_bits = 0;
  std::int64_t file_size_bytes = 0;  // ceil(bits / 8)
  double compression_ratio = 0;
};

/// One row per report; raw size is M * raw_bits_per_image.
std::vector<ComparisonRow> comparison_report(std::span<const DLReport> reports,
                                             double raw_bits_per_image);

/// CSV with header scheme,M,total_bits,file_size_bytes,compression_ratio.
void write_comparison_csv(std::ostream& out, std::span<const ComparisonRow> rows);

/// Baseline measurements, one row per image:
/// scheme,image_id,code_bits,model_bits. Scheme names prefixed "IIC:" (or
/// the known INR codecs COIN/Combiner) are per-image-model schemes; the rest
/// are EIC and must repeat one decoder size on every row.
struct BaselineRow {
  std::string scheme;
  std::string image_id;
  double code_bits = 0;
  double model_bits = 0;
};

std::vector<BaselineRow> read_baseline_csv(std::istream& in);
std::vector<DLReport> baseline_reports(std::span<const BaselineRow> rows,
                                       std::int64_t pixels_per_image);

}  // namespace laduree
