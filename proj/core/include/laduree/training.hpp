#pragma once

#include "laduree/denoiser.hpp"
#include "laduree/diffusion.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

namespace laduree {

struct TrainOptions {
  int epochs = 50;
  double lr = 2e-4;
  int halve_every = 10;
  int batch_size = 16;
  /// Passes over the dataset per epoch. 1 is a plain epoch; small image
  /// sets need more optimizer steps than M / batch_size per epoch.
  int repeats_per_epoch = 1;
  std::uint64_t data_seed = 0;   // batch order
  std::uint64_t noise_seed = 0;  // timesteps and noise

  void validate() const;
};

/// lr * 2^-floor(epoch / halve_every).
double learning_rate_at(const TrainOptions& options, int epoch);

struct EpochLog {
  int epoch = 0;
  double lr = 0;
  double mean_loss = 0;
  std::int64_t steps = 0;
  double seconds = 0;  // wall clock; excluded from reproducibility checks
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Minimizes the x0-prediction loss on (latent, index) pairs with Adam.
/// Every batch draws t and then eps per sample from the noise stream.
/// Throws TrainingDivergedError when a batch loss is not finite.
std::vector<EpochLog> train_denoiser(Denoiser& model, std::span<const Vector> latents,
                                     std::span<const std::int64_t> indices, const NoiseSchedule& schedule,
                                     const TrainOptions& options, const EpochCallback& on_epoch = {});

/// Mean training loss over every (latent, index) pair at fixed seeds,
/// without updating the model.
double evaluate_loss(const Denoiser& model, std::span<const Vector> latents, std::span<const std::int64_t> indices,
                     const NoiseSchedule& schedule, std::uint64_t noise_seed, int draws_per_sample = 4);

/// CSV: epoch,lr,mean_loss,steps,seconds
void write_loss_csv(const std::filesystem::path& path, std::span<const EpochLog> log);

}  // namespace laduree
