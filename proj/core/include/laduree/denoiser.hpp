#pragma once

#include "laduree/autograd.hpp"
#include "laduree/conditioning.hpp"
#include "laduree/index_embedding.hpp"
#include "laduree/named_tensor.hpp"
#include "laduree/nn.hpp"
#include "laduree/tensor.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace laduree {

struct DenoiserConfig {
  int depth = 6;             // B
  int hidden = 96;           // H
  int num_heads = 8;
  int patch_size = 2;        // p
  Shape3 latent_shape{3, 32, 32};
  double mlp_ratio = 4.0;
  EmbeddingKind embedding = EmbeddingKind::GRF;
  ConditioningKind conditioning = ConditioningKind::CAG;
  std::int64_t num_images = 1;  // M
  std::uint64_t embed_seed = 0;

  void validate() const;
  [[nodiscard]] EmbeddingSpec embedding_spec() const;
  /// Timestep embedder: EDF when the index uses EDF, GRF otherwise, with
  /// its own frequency seed.
  [[nodiscard]] EmbeddingSpec timestep_spec() const;
  [[nodiscard]] ConditioningSpec conditioning_spec() const;
  [[nodiscard]] int tokens() const;
  [[nodiscard]] int token_width() const;
};

/// Closed-form count of trainable parameters:
/// patch embed + B (base + extra) + index/timestep embedders + head.
/// Position embeddings are fixed and contribute nothing.
std::int64_t total_param_count(const DenoiserConfig& config);

/// Divisor of `hidden` closest to hidden / 12; ties go to the smaller one.
int default_num_heads(int hidden);

/// (C, H, W) latent -> (tokens, C p^2). Tokens run row-major over the patch
/// grid; within a token the order is (channel, dy, dx).
Matrix patchify(const Vector& latent, const Shape3& shape, int patch);
Vector unpatchify(const Matrix& tokens, const Shape3& shape, int patch);

/// Fixed 2-D sin-cos position table (tokens, H). Falls back to a 1-D table
/// over the flat token index when H is not a multiple of 4.
Matrix position_table(int grid_h, int grid_w, int hidden);

/// Index-conditioned diffusion transformer predicting clean latents.
class Denoiser {
 public:
  Denoiser() = default;
  Denoiser(const DenoiserConfig& config, std::uint64_t init_seed);

  /// Batched forward; returns patch tokens (N * tokens, C p^2).
  [[nodiscard]] Var forward(Tape& tape, std::span<const Vector> x_t, std::span<const int> t,
                            std::span<const std::int64_t> y) const;

  [[nodiscard]] Tensor3 predict_x0(const Tensor3& x_t, int t, std::int64_t y) const;
  [[nodiscard]] Vector predict_x0(const Vector& x_t, int t, std::int64_t y) const;

  /// All trainable parameters, sorted by name.
  [[nodiscard]] ParamList parameters();
  [[nodiscard]] std::int64_t trainable_count() const;

  /// float32 snapshot in parameter order; what checkpoints and the
  /// quantizer consume.
  [[nodiscard]] TensorList export_tensors() const;
  /// Replaces all parameter values; names and shapes must match exactly.
  void import_tensors(const TensorList& tensors);

  [[nodiscard]] const DenoiserConfig& config() const { return config_; }
  [[nodiscard]] const IndexEmbedder& index_embedder() const { return index_embedder_; }
  [[nodiscard]] IndexEmbedder& index_embedder() { return index_embedder_; }
  [[nodiscard]] const IndexEmbedder& timestep_embedder() const { return time_embedder_; }
  [[nodiscard]] std::vector<TransformerBlock>& blocks() { return blocks_; }

 private:
  void check_latent(const Vector& x_t) const;

  DenoiserConfig config_;
  Linear patch_embed_;
  Matrix positions_;
  IndexEmbedder index_embedder_;
  IndexEmbedder time_embedder_;
  std::vector<TransformerBlock> blocks_;
  Linear head_;
};

Denoiser build_denoiser(const DenoiserConfig& config, std::uint64_t init_seed);

}  // namespace laduree
