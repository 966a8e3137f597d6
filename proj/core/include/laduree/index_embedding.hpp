#pragma once

#include "laduree/autograd.hpp"
#include "laduree/nn.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace laduree {

enum class EmbeddingKind : std::uint8_t { GRF = 0, EDF = 1, LET = 2, MLP = 3 };

std::string_view to_string(EmbeddingKind kind);
EmbeddingKind parse_embedding_kind(std::string_view text);

struct EmbeddingSpec {
  EmbeddingKind kind = EmbeddingKind::GRF;
  int hidden_size = 0;          // even
  std::int64_t num_images = 1;  // M; LET table rows, MLP input normalization
  std::uint64_t seed = 0;       // GRF frequency stream

  void validate() const;
};

struct ParamCount {
  std::int64_t trainable = 0;
  std::int64_t training_free = 0;

  friend bool operator==(const ParamCount&, const ParamCount&) = default;
};

/// Closed-form parameter accounting per embedding kind.
///   GRF: (0, H/2)   EDF: (2H^2 + 2H, H/2)   LET: (M H, 0)   MLP: (H^2 + 3H, 0)
ParamCount param_count(const EmbeddingSpec& spec);

/// Maps an integer index to a width-H condition vector.
///
/// GRF  [cos(2 pi f_j y), sin(2 pi f_j y)] pairs, f_j ~ N(0, 1) frozen.
/// EDF  [cos(w_i y), sin(w_i y)] pairs, w_i = 10000^(-2i/H), then a
///      trainable Linear(H,H) -> SiLU -> Linear(H,H) projection.
/// LET  row y of a trainable (M, H) table.
/// MLP  Linear(1,H) -> SiLU -> Linear(H,H) applied to y / M.
class IndexEmbedder {
 public:
  IndexEmbedder() = default;
  /// `init` seeds the trainable weights; frozen GRF frequencies come from
  /// spec.seed only.
  IndexEmbedder(const EmbeddingSpec& spec, Rng& init);

  [[nodiscard]] Var embed(Tape& tape, std::span<const std::int64_t> indices) const;
  [[nodiscard]] RowVector embed(std::int64_t index) const;

  void collect(const std::string& prefix, ParamList& out);

  [[nodiscard]] const EmbeddingSpec& spec() const { return spec_; }
  /// GRF random frequencies or the EDF ladder; empty for LET and MLP.
  [[nodiscard]] const Vector& frozen_frequencies() const { return frequencies_; }
  /// Direct access to the LET table (M, H).
  [[nodiscard]] Parameter& table() { return table_; }

 private:
  [[nodiscard]] Matrix sinusoid_features(std::span<const std::int64_t> indices) const;
  void check_index(std::int64_t index) const;

  EmbeddingSpec spec_;
  Vector frequencies_;
  Parameter table_;
  Linear fc1_;
  Linear fc2_;
};

/// make_embedder: validates the spec and constructs.
IndexEmbedder make_embedder(const EmbeddingSpec& spec, std::uint64_t init_seed = 0);

}  // namespace laduree
