#include "laduree/ablation.hpp"

#include "laduree/errors.hpp"
#include "laduree/image.hpp"
#include "text_util.hpp"

#include <charconv>
#include <cstdio>
#include <optional>
#include <ostream>

namespace laduree {

std::string_view to_string(AblationAxis axis) {
  switch (axis) {
    case AblationAxis::Embedding: return "embedding";
    case AblationAxis::Conditioning: return "conditioning";
    case AblationAxis::Quantization: return "quantization";
    case AblationAxis::Normalization: return "normalization";
  }
  return "?";
}

AblationAxis parse_ablation_axis(std::string_view text) {
  for (auto a : {AblationAxis::Embedding, AblationAxis::Conditioning, AblationAxis::Quantization,
                 AblationAxis::Normalization}) {
    if (to_string(a) == text) return a;
  }
  throw ValidationError("unknown ablation axis '" + std::string(text) +
                        "' (embedding|conditioning|quantization|normalization)");
}

namespace {

std::string checked_number(const std::string& text, bool integer, const std::string& what) {
  const std::string t = detail::trim(text);
  const char* end = t.data() + t.size();
  bool ok = false;
  if (integer) {
    int v = 0;
    const auto r = std::from_chars(t.data(), end, v);
    ok = r.ec == std::errc() && r.ptr == end;
  } else {
    double v = 0;
    const auto r = std::from_chars(t.data(), end, v);
    ok = r.ec == std::errc() && r.ptr == end;
  }
  if (t.empty() || !ok) throw ValidationError(what + " value '" + text + "' is not a number");
  return t;
}

}  // namespace

std::vector<std::string> ablation_overrides(AblationAxis axis, const std::string& value) {
  switch (axis) {
    case AblationAxis::Embedding: return {"embedding=" + std::string(to_string(parse_embedding_kind(value)))};
    case AblationAxis::Conditioning:
      return {"conditioning=" + std::string(to_string(parse_conditioning_kind(value)))};
    case AblationAxis::Normalization: return {"target_std=" + checked_number(value, false, "normalization")};
    case AblationAxis::Quantization: {
      const auto parts = detail::split_csv(value);
      if (parts.size() == 1) return {"m_bits=" + checked_number(parts[0], true, "quantization")};
      if (parts.size() == 2) {
        return {"e_bits=" + checked_number(parts[0], true, "quantization"),
                "m_bits=" + checked_number(parts[1], true, "quantization")};
      }
      throw ValidationError("quantization value '" + value + "' must be E,M or M");
    }
  }
  return {};
}

std::int64_t component_param_count(AblationAxis axis, const DenoiserConfig& config) {
  switch (axis) {
    case AblationAxis::Embedding: return param_count(config.embedding_spec()).trainable;
    case AblationAxis::Conditioning: return config.depth * extra_param_count(config.conditioning_spec());
    case AblationAxis::Quantization:
    case AblationAxis::Normalization: return total_param_count(config);
  }
  return 0;
}

namespace {

RunConfig with_overrides(const RunConfig& base, const std::vector<std::string>& overrides) {
  std::vector<std::string> all;
  for (const auto& [k, v] : base.values()) all.push_back(k + "=" + v);
  all.insert(all.end(), overrides.begin(), overrides.end());
  return RunConfig::parse("", all, nullptr, "<ablation>");
}

void evaluate(AblationRow& row, const CodecModel& model, const RunConfig& cfg, const IndexImageDataset& dataset,
              AblationAxis axis) {
  const Archive archive = compress(model, cfg.quant_spec());
  const ArchiveBits bits = archive_bits(archive);
  const Decoder decoder(archive);
  VerifyOptions vo;
  vo.decode = cfg.decode_options();
  const VerifyReport report = verify(decoder, dataset, vo, bits.total_bits);
  row.trainable_params = model.denoiser.trainable_count();
  row.component_params = component_param_count(axis, model.denoiser.config());
  row.model_bits = archive.weights.model_bits();
  row.total_bits = bits.total_bits;
  row.bpp = report.bpp;
  row.mean_psnr = report.mean_psnr;
  row.matching_accuracy = report.matching_accuracy;
}

}  // namespace

std::vector<AblationRow> run_ablation(const RunConfig& base, const IndexImageDataset& dataset, AblationAxis axis,
                                      const std::vector<std::string>& values, const AblationProgress& progress) {
  std::vector<AblationRow> rows;
  std::optional<CodecModel> shared;  // quantization axis: one training run
  std::string shared_failure;
  for (const auto& value : values) {
    AblationRow row;
    row.axis = std::string(to_string(axis));
    row.value = value;
    try {
      const RunConfig cfg = with_overrides(base, ablation_overrides(axis, value));
      if (axis == AblationAxis::Quantization) {
        if (!shared && shared_failure.empty()) {
          try {
            shared = train_codec(dataset, build_backend(cfg, dataset), cfg.codec_setup());
          } catch (const std::exception& e) {
            shared_failure = e.what();
          }
        }
        if (!shared) throw RuntimeError(shared_failure);
        evaluate(row, *shared, cfg, dataset, axis);
      } else {
        const CodecModel model = train_codec(dataset, build_backend(cfg, dataset), cfg.codec_setup());
        evaluate(row, model, cfg, dataset, axis);
      }
    } catch (const std::exception& e) {
      row.failure = e.what();
    }
    if (progress) progress(row);
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows) {
  out << "axis,value,trainable_params,component_params,model_bits,total_bits,bpp,mean_psnr,matching_accuracy,failure\n";
  for (const auto& r : rows) {
    std::string failure = r.failure;
    for (char& c : failure) {
      if (c == ',' || c == '\n' || c == '\r') c = ';';
    }
    char bpp[32], acc[32];
    std::snprintf(bpp, sizeof bpp, "%.9g", r.bpp);
    std::snprintf(acc, sizeof acc, "%.6g", r.matching_accuracy);
    std::string value = r.value;
    for (char& c : value) {
      if (c == ',') c = ':';
    }
    out << r.axis << ',' << value << ',' << r.trainable_params << ',' << r.component_params << ','
        << r.model_bits << ',' << r.total_bits << ',' << bpp << ',' << format_psnr(r.mean_psnr) << ',' << acc
        << ',' << failure << '\n';
  }
}

}  // namespace laduree
