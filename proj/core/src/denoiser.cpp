#include "laduree/denoiser.hpp"

#include "laduree/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace laduree {

std::vector<TensorInfo> manifest_of(const TensorList& tensors) {
  std::vector<TensorInfo> out;
  out.reserve(tensors.size());
  for (const auto& t : tensors) out.push_back({t.name, t.shape});
  return out;
}

std::int64_t total_values(const TensorList& tensors) {
  std::int64_t n = 0;
  for (const auto& t : tensors) n += t.numel();
  return n;
}

void DenoiserConfig::validate() const {
  if (depth < 1) throw ValidationError("depth must be >= 1");
  if (patch_size < 1) throw ValidationError("patch_size must be >= 1");
  if (latent_shape.channels < 1 || latent_shape.height < 1 || latent_shape.width < 1) {
    throw ValidationError("latent shape must be positive, got " + to_string(latent_shape));
  }
  if (latent_shape.height % patch_size != 0 || latent_shape.width % patch_size != 0) {
    throw ValidationError("patch_size " + std::to_string(patch_size) +
                          " must divide latent height and width " + to_string(latent_shape));
  }
  embedding_spec().validate();
  conditioning_spec().validate();
}

EmbeddingSpec DenoiserConfig::embedding_spec() const {
  return EmbeddingSpec{embedding, hidden, num_images, embed_seed};
}

EmbeddingSpec DenoiserConfig::timestep_spec() const {
  const EmbeddingKind kind = embedding == EmbeddingKind::EDF ? EmbeddingKind::EDF : EmbeddingKind::GRF;
  return EmbeddingSpec{kind, hidden, num_images, mix_seed(embed_seed, 1)};
}

ConditioningSpec DenoiserConfig::conditioning_spec() const {
  return ConditioningSpec{conditioning, hidden, num_heads, mlp_ratio};
}

int DenoiserConfig::tokens() const {
  return (latent_shape.height / patch_size) * (latent_shape.width / patch_size);
}

int DenoiserConfig::token_width() const {
  return latent_shape.channels * patch_size * patch_size;
}

int default_num_heads(int hidden) {
  if (hidden < 1) throw ValidationError("hidden must be positive");
  const double target = hidden / 12.0;
  int best = 1;
  for (int d = 1; d <= hidden; ++d) {
    if (hidden % d == 0 && std::abs(d - target) < std::abs(best - target)) best = d;
  }
  return best;
}

std::int64_t total_param_count(const DenoiserConfig& config) {
  config.validate();
  const std::int64_t h = config.hidden;
  const std::int64_t width = config.token_width();
  const ConditioningSpec cond = config.conditioning_spec();
  return Linear::param_count(width, h) +
         config.depth * (base_block_param_count(cond) + extra_param_count(cond)) +
         param_count(config.embedding_spec()).trainable +
         param_count(config.timestep_spec()).trainable + Linear::param_count(h, width);
}

Matrix patchify(const Vector& latent, const Shape3& shape, int patch) {
  const int gh = shape.height / patch, gw = shape.width / patch;
  Matrix tokens(gh * gw, shape.channels * patch * patch);
  for (int gy = 0; gy < gh; ++gy) {
    for (int gx = 0; gx < gw; ++gx) {
      const int row = gy * gw + gx;
      for (int c = 0; c < shape.channels; ++c) {
        for (int dy = 0; dy < patch; ++dy) {
          for (int dx = 0; dx < patch; ++dx) {
            const std::int64_t src =
                (static_cast<std::int64_t>(c) * shape.height + gy * patch + dy) * shape.width +
                gx * patch + dx;
            tokens(row, (c * patch + dy) * patch + dx) = latent[src];
          }
        }
      }
    }
  }
  return tokens;
}

Vector unpatchify(const Matrix& tokens, const Shape3& shape, int patch) {
  const int gh = shape.height / patch, gw = shape.width / patch;
  if (tokens.rows() != gh * gw || tokens.cols() != shape.channels * patch * patch) {
    throw ValidationError("unpatchify: token matrix does not match latent shape");
  }
  Vector latent(shape.numel());
  for (int gy = 0; gy < gh; ++gy) {
    for (int gx = 0; gx < gw; ++gx) {
      const int row = gy * gw + gx;
      for (int c = 0; c < shape.channels; ++c) {
        for (int dy = 0; dy < patch; ++dy) {
          for (int dx = 0; dx < patch; ++dx) {
            const std::int64_t dst =
                (static_cast<std::int64_t>(c) * shape.height + gy * patch + dy) * shape.width +
                gx * patch + dx;
            latent[dst] = tokens(row, (c * patch + dy) * patch + dx);
          }
        }
      }
    }
  }
  return latent;
}

namespace {

// 1-D sin-cos features of `pos` written into dims [offset, offset + dims).
void sincos_1d(Matrix& out, Eigen::Index row, Eigen::Index offset, int dims, double pos) {
  const int half = dims / 2;
  for (int i = 0; i < half; ++i) {
    const double omega = 1.0 / std::pow(10000.0, static_cast<double>(i) / half);
    out(row, offset + i) = std::sin(pos * omega);
    out(row, offset + half + i) = std::cos(pos * omega);
  }
}

}  // namespace

Matrix position_table(int grid_h, int grid_w, int hidden) {
  Matrix table = Matrix::Zero(grid_h * grid_w, hidden);
  for (int gy = 0; gy < grid_h; ++gy) {
    for (int gx = 0; gx < grid_w; ++gx) {
      const Eigen::Index row = gy * grid_w + gx;
      if (hidden % 4 == 0) {
        sincos_1d(table, row, 0, hidden / 2, gy);
        sincos_1d(table, row, hidden / 2, hidden / 2, gx);
      } else {
        sincos_1d(table, row, 0, hidden, static_cast<double>(row));
      }
    }
  }
  return table;
}

Denoiser::Denoiser(const DenoiserConfig& config, std::uint64_t init_seed) : config_(config) {
  config_.validate();
  Rng rng(init_seed);
  const int h = config_.hidden;
  patch_embed_ = Linear(config_.token_width(), h, rng);
  positions_ = position_table(config_.latent_shape.height / config_.patch_size,
                              config_.latent_shape.width / config_.patch_size, h);
  index_embedder_ = IndexEmbedder(config_.embedding_spec(), rng);
  time_embedder_ = IndexEmbedder(config_.timestep_spec(), rng);
  blocks_.reserve(static_cast<std::size_t>(config_.depth));
  for (int b = 0; b < config_.depth; ++b) blocks_.emplace_back(config_.conditioning_spec(), rng);
  head_ = Linear(h, config_.token_width(), rng, Init::Zeros);
}

void Denoiser::check_latent(const Vector& x_t) const {
  if (x_t.size() != config_.latent_shape.numel()) {
    throw ValidationError("latent has " + std::to_string(x_t.size()) + " values, expected shape " +
                          to_string(config_.latent_shape));
  }
}

Var Denoiser::forward(Tape& tape, std::span<const Vector> x_t, std::span<const int> t,
                      std::span<const std::int64_t> y) const {
  const std::size_t batch = x_t.size();
  if (batch == 0 || t.size() != batch || y.size() != batch) {
    throw ValidationError("denoiser forward: batch size mismatch");
  }
  const int len = config_.tokens();
  const int width = config_.token_width();
  Matrix tokens(static_cast<Eigen::Index>(batch) * len, width);
  Matrix positions(static_cast<Eigen::Index>(batch) * len, config_.hidden);
  std::vector<std::int64_t> steps(batch);
  for (std::size_t n = 0; n < batch; ++n) {
    check_latent(x_t[n]);
    tokens.middleRows(static_cast<Eigen::Index>(n) * len, len) =
        patchify(x_t[n], config_.latent_shape, config_.patch_size);
    positions.middleRows(static_cast<Eigen::Index>(n) * len, len) = positions_;
    steps[n] = t[n];
  }

  const Var cond = ag::add(index_embedder_.embed(tape, y), time_embedder_.embed(tape, steps));
  Var x = ag::add(patch_embed_.forward(tape, tape.constant(std::move(tokens))),
                  tape.constant(std::move(positions)));
  for (const auto& block : blocks_) {
    x = block.forward(tape, x, len, cond);
    if (block.output_length(len) != len) x = ag::drop_first_rows(x, len + 1);
  }
  return head_.forward(tape, ag::layer_norm(x));
}

Vector Denoiser::predict_x0(const Vector& x_t, int t, std::int64_t y) const {
  Tape tape(false);
  const Vector batch[] = {x_t};
  const int steps[] = {t};
  const std::int64_t indices[] = {y};
  const Var out = forward(tape, batch, steps, indices);
  return unpatchify(out.value(), config_.latent_shape, config_.patch_size);
}

Tensor3 Denoiser::predict_x0(const Tensor3& x_t, int t, std::int64_t y) const {
  if (!(x_t.shape == config_.latent_shape)) {
    throw ValidationError("latent shape " + to_string(x_t.shape) + " does not match model shape " +
                          to_string(config_.latent_shape));
  }
  return Tensor3(x_t.shape, predict_x0(x_t.values, t, y));
}

ParamList Denoiser::parameters() {
  ParamList out;
  patch_embed_.collect("patch_embed", out);
  index_embedder_.collect("index_embed", out);
  time_embedder_.collect("time_embed", out);
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    char prefix[32];
    std::snprintf(prefix, sizeof(prefix), "blocks.%03zu", b);
    blocks_[b].collect(prefix, out);
  }
  head_.collect("head", out);
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  return out;
}

std::int64_t Denoiser::trainable_count() const {
  return count_parameters(const_cast<Denoiser*>(this)->parameters());
}

TensorList Denoiser::export_tensors() const {
  TensorList out;
  for (const auto& [name, p] : const_cast<Denoiser*>(this)->parameters()) {
    NamedTensor t{name, {p->value.rows(), p->value.cols()}, {}};
    t.data.resize(static_cast<std::size_t>(p->value.size()));
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      t.data[static_cast<std::size_t>(i)] = static_cast<float>(p->value.data()[i]);
    }
    out.push_back(std::move(t));
  }
  return out;
}

void Denoiser::import_tensors(const TensorList& tensors) {
  ParamList params = parameters();
  if (params.size() != tensors.size()) {
    throw CorruptInputError("tensor count " + std::to_string(tensors.size()) +
                            " does not match model (" + std::to_string(params.size()) + ")");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, p] = params[i];
    const NamedTensor& t = tensors[i];
    if (t.name != name || t.shape.size() != 2 || t.shape[0] != p->value.rows() ||
        t.shape[1] != p->value.cols() || static_cast<std::int64_t>(t.data.size()) != t.numel()) {
      throw CorruptInputError("tensor '" + t.name + "' does not match model parameter '" + name + "'");
    }
    for (Eigen::Index j = 0; j < p->value.size(); ++j) {
      p->value.data()[j] = static_cast<double>(t.data[static_cast<std::size_t>(j)]);
    }
  }
}

Denoiser build_denoiser(const DenoiserConfig& config, std::uint64_t init_seed) {
  return Denoiser(config, init_seed);
}

}  // namespace laduree
