#include "laduree/index_embedding.hpp"

#include "laduree/errors.hpp"

#include <cmath>
#include <numbers>

namespace laduree {

std::string_view to_string(EmbeddingKind kind) {
  switch (kind) {
    case EmbeddingKind::GRF: return "GRF";
    case EmbeddingKind::EDF: return "EDF";
    case EmbeddingKind::LET: return "LET";
    case EmbeddingKind::MLP: return "MLP";
  }
  return "?";
}

EmbeddingKind parse_embedding_kind(std::string_view text) {
  for (auto kind : {EmbeddingKind::GRF, EmbeddingKind::EDF, EmbeddingKind::LET, EmbeddingKind::MLP}) {
    if (text == to_string(kind)) return kind;
  }
  throw ValidationError("unknown embedding kind '" + std::string(text) + "' (GRF|EDF|LET|MLP)");
}

void EmbeddingSpec::validate() const {
  if (hidden_size <= 0 || hidden_size % 2 != 0) {
    throw ValidationError("embedding hidden_size must be a positive even integer, got " +
                          std::to_string(hidden_size));
  }
  if (num_images < 1) {
    throw ValidationError("embedding num_images must be >= 1, got " + std::to_string(num_images));
  }
}

ParamCount param_count(const EmbeddingSpec& spec) {
  const std::int64_t h = spec.hidden_size;
  switch (spec.kind) {
    case EmbeddingKind::GRF: return {0, h / 2};
    case EmbeddingKind::EDF: return {2 * h * h + 2 * h, h / 2};
    case EmbeddingKind::LET: return {spec.num_images * h, 0};
    case EmbeddingKind::MLP: return {h * h + 3 * h, 0};
  }
  return {};
}

IndexEmbedder::IndexEmbedder(const EmbeddingSpec& spec, Rng& init) : spec_(spec) {
  spec_.validate();
  const int h = spec_.hidden_size;
  switch (spec_.kind) {
    case EmbeddingKind::GRF: {
      frequencies_.resize(h / 2);
      Rng stream(spec_.seed);
      for (auto& f : frequencies_) f = stream.normal();
      break;
    }
    case EmbeddingKind::EDF:
      frequencies_.resize(h / 2);
      for (int i = 0; i < h / 2; ++i) {
        frequencies_[i] = std::pow(10000.0, -2.0 * i / static_cast<double>(h));
      }
      fc1_ = Linear(h, h, init);
      fc2_ = Linear(h, h, init);
      break;
    case EmbeddingKind::LET:
      table_.value.resize(spec_.num_images, h);
      for (Eigen::Index i = 0; i < table_.value.size(); ++i) {
        table_.value.data()[i] = 0.02 * init.normal();
      }
      break;
    case EmbeddingKind::MLP:
      fc1_ = Linear(1, h, init);
      fc2_ = Linear(h, h, init);
      break;
  }
}

void IndexEmbedder::check_index(std::int64_t index) const {
  if (index < 0) throw OutOfRangeError("index must be non-negative, got " + std::to_string(index));
  if (spec_.kind == EmbeddingKind::LET && index >= spec_.num_images) {
    throw OutOfRangeError("index " + std::to_string(index) + " out of range for LET with M=" +
                          std::to_string(spec_.num_images));
  }
}

Matrix IndexEmbedder::sinusoid_features(std::span<const std::int64_t> indices) const {
  const double two_pi = 2.0 * std::numbers::pi;
  const double angular = spec_.kind == EmbeddingKind::GRF ? two_pi : 1.0;
  Matrix out(static_cast<Eigen::Index>(indices.size()), spec_.hidden_size);
  for (std::size_t n = 0; n < indices.size(); ++n) {
    const double y = static_cast<double>(indices[n]);
    for (Eigen::Index j = 0; j < frequencies_.size(); ++j) {
      const double phase = angular * frequencies_[j] * y;
      out(static_cast<Eigen::Index>(n), 2 * j) = std::cos(phase);
      out(static_cast<Eigen::Index>(n), 2 * j + 1) = std::sin(phase);
    }
  }
  return out;
}

Var IndexEmbedder::embed(Tape& tape, std::span<const std::int64_t> indices) const {
  for (auto y : indices) check_index(y);
  switch (spec_.kind) {
    case EmbeddingKind::GRF:
      return tape.constant(sinusoid_features(indices));
    case EmbeddingKind::EDF: {
      const Var feats = tape.constant(sinusoid_features(indices));
      return fc2_.forward(tape, ag::silu(fc1_.forward(tape, feats)));
    }
    case EmbeddingKind::LET:
      return ag::gather_rows(tape.parameter(table_), indices);
    case EmbeddingKind::MLP: {
      Matrix scalar(static_cast<Eigen::Index>(indices.size()), 1);
      for (std::size_t n = 0; n < indices.size(); ++n) {
        scalar(static_cast<Eigen::Index>(n), 0) =
            static_cast<double>(indices[n]) / static_cast<double>(spec_.num_images);
      }
      const Var in = tape.constant(std::move(scalar));
      return fc2_.forward(tape, ag::silu(fc1_.forward(tape, in)));
    }
  }
  throw ValidationError("unhandled embedding kind");
}

RowVector IndexEmbedder::embed(std::int64_t index) const {
  Tape tape(false);
  const std::int64_t indices[] = {index};
  return embed(tape, indices).value().row(0);
}

void IndexEmbedder::collect(const std::string& prefix, ParamList& out) {
  switch (spec_.kind) {
    case EmbeddingKind::GRF: break;
    case EmbeddingKind::LET: out.emplace_back(prefix + ".table", &table_); break;
    case EmbeddingKind::EDF:
    case EmbeddingKind::MLP:
      fc1_.collect(prefix + ".fc1", out);
      fc2_.collect(prefix + ".fc2", out);
      break;
  }
}

IndexEmbedder make_embedder(const EmbeddingSpec& spec, std::uint64_t init_seed) {
  spec.validate();
  Rng init(init_seed);
  return IndexEmbedder(spec, init);
}

}  // namespace laduree
