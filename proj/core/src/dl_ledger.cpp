#include "laduree/dl_ledger.hpp"

#include "laduree/errors.hpp"

#include <cmath>
#include <iomanip>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

namespace laduree {

std::string_view to_string(Scheme scheme) {
  switch (scheme) {
    case Scheme::Unicorn: return "Unicorn";
    case Scheme::EIC: return "EIC";
    case Scheme::IIC: return "IIC";
  }
  return "?";
}

namespace {

void finish(DLReport& r) {
  if (r.pixels_per_image < 1) throw ValidationError("pixels_per_image must be >= 1");
  r.total_bits = r.index_or_code_bits + r.model_bits;
  const double pixels = static_cast<double>(r.num_images) * static_cast<double>(r.pixels_per_image);
  r.bpp = r.total_bits / pixels;
  r.compression_ratio = pixels * kRawBitsPerPixel / r.total_bits;
}

void check_non_negative(std::span<const double> values, const char* what) {
  for (double v : values) {
    if (!(v >= 0.0)) throw ValidationError(std::string(what) + " entries must be >= 0");
  }
}

}  // namespace

DLReport dl_unicorn(std::int64_t num_images, double model_bits, std::int64_t pixels_per_image) {
  if (num_images < 1) throw ValidationError("M must be >= 1, got " + std::to_string(num_images));
  if (!(model_bits >= 0.0)) throw ValidationError("model_bits must be >= 0");
  DLReport r;
  r.scheme = Scheme::Unicorn;
  r.label = "Unicorn";
  r.num_images = num_images;
  r.pixels_per_image = pixels_per_image;
  const double m = static_cast<double>(num_images);
  r.index_or_code_bits = m * std::log2(m);
  r.model_bits = model_bits;
  finish(r);
  return r;
}

OnlineBits per_image_online_bits(std::int64_t num_images) {
  if (num_images < 1) throw ValidationError("M must be >= 1, got " + std::to_string(num_images));
  OnlineBits bits;
  bits.ideal = std::log2(static_cast<double>(num_images));
  // Smallest k with 2^k >= M, computed on integers.
  std::int64_t k = 0;
  while ((std::int64_t{1} << k) < num_images) ++k;
  bits.fixed_length = k;
  return bits;
}

DLReport dl_eic(std::span<const double> per_image_code_bits, double decoder_bits,
                std::int64_t pixels_per_image) {
  if (per_image_code_bits.empty()) throw ValidationError("dl_eic needs at least one image");
  check_non_negative(per_image_code_bits, "code_bits");
  if (!(decoder_bits >= 0.0)) throw ValidationError("decoder_bits must be >= 0");
  DLReport r;
  r.scheme = Scheme::EIC;
  r.label = "EIC";
  r.num_images = static_cast<std::int64_t>(per_image_code_bits.size());
  r.pixels_per_image = pixels_per_image;
  r.index_or_code_bits = std::accumulate(per_image_code_bits.begin(), per_image_code_bits.end(), 0.0);
  r.model_bits = decoder_bits;
  finish(r);
  return r;
}

DLReport dl_iic(std::span<const double> per_image_nll_bits, std::span<const double> per_model_bits,
                std::int64_t pixels_per_image) {
  if (per_image_nll_bits.size() != per_model_bits.size()) {
    throw ValidationError("dl_iic: nll and model lists differ in length");
  }
  if (per_image_nll_bits.empty()) throw ValidationError("dl_iic needs at least one image");
  check_non_negative(per_image_nll_bits, "nll_bits");
  check_non_negative(per_model_bits, "model_bits");
  DLReport r;
  r.scheme = Scheme::IIC;
  r.label = "IIC";
  r.num_images = static_cast<std::int64_t>(per_image_nll_bits.size());
  r.pixels_per_image = pixels_per_image;
  r.index_or_code_bits = std::accumulate(per_image_nll_bits.begin(), per_image_nll_bits.end(), 0.0);
  r.model_bits = std::accumulate(per_model_bits.begin(), per_model_bits.end(), 0.0);
  finish(r);
  return r;
}

std::vector<ComparisonRow> comparison_report(std::span<const DLReport> reports,
                                             double raw_bits_per_image) {
  if (!(raw_bits_per_image > 0.0)) throw ValidationError("raw_bits_per_image must be > 0");
  std::vector<ComparisonRow> rows;
  for (const DLReport& r : reports) {
    ComparisonRow row;
    row.scheme = r.label.empty() ? std::string(to_string(r.scheme)) : r.label;
    row.num_images = r.num_images;
    row.total_bits = r.total_bits;
    row.file_size_bytes = static_cast<std::int64_t>(std::ceil(r.total_bits / 8.0));
    row.compression_ratio = static_cast<double>(r.num_images) * raw_bits_per_image / r.total_bits;
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_comparison_csv(std::ostream& out, std::span<const ComparisonRow> rows) {
  out << "scheme,M,total_bits,file_size_bytes,compression_ratio\n";
  for (const auto& r : rows) {
    out << r.scheme << ',' << r.num_images << ',' << std::setprecision(17) << r.total_bits << ','
        << r.file_size_bytes << ',' << std::setprecision(10) << r.compression_ratio << '\n';
  }
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

double parse_bits(const std::string& text, std::size_t line_no) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("baseline CSV line " + std::to_string(line_no) + ": bad number '" + text + "'");
  }
}

bool is_iic(const std::string& scheme) {
  return scheme.rfind("IIC:", 0) == 0 || scheme == "COIN" || scheme == "Combiner";
}

}  // namespace

std::vector<BaselineRow> read_baseline_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("baseline CSV is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "scheme,image_id,code_bits,model_bits") {
    throw ValidationError("baseline CSV header must be scheme,image_id,code_bits,model_bits");
  }
  std::vector<BaselineRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 4) {
      throw ValidationError("baseline CSV line " + std::to_string(line_no) + ": expected 4 columns");
    }
    rows.push_back({cells[0], cells[1], parse_bits(cells[2], line_no), parse_bits(cells[3], line_no)});
  }
  return rows;
}

std::vector<DLReport> baseline_reports(std::span<const BaselineRow> rows,
                                       std::int64_t pixels_per_image) {
  std::map<std::string, std::vector<const BaselineRow*>> groups;
  std::vector<std::string> order;
  for (const auto& row : rows) {
    auto [it, inserted] = groups.try_emplace(row.scheme);
    if (inserted) order.push_back(row.scheme);
    it->second.push_back(&row);
  }
  std::vector<DLReport> reports;
  for (const auto& scheme : order) {
    const auto& group = groups[scheme];
    std::vector<double> code, model;
    for (const auto* r : group) {
      code.push_back(r->code_bits);
      model.push_back(r->model_bits);
    }
    DLReport rep;
    if (is_iic(scheme)) {
      rep = dl_iic(code, model, pixels_per_image);
    } else {
      for (double m : model) {
        if (m != model.front()) {
          throw ValidationError("EIC scheme '" + scheme + "' lists different decoder sizes");
        }
      }
      rep = dl_eic(code, model.front(), pixels_per_image);
    }
    rep.label = scheme;
    reports.push_back(std::move(rep));
  }
  return reports;
}

}  // namespace laduree
