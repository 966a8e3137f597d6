#include "laduree/training.hpp"

#include "laduree/errors.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

namespace laduree {

void TrainOptions::validate() const {
  std::vector<std::string> problems;
  if (epochs < 1) problems.push_back("epochs must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) problems.push_back("lr must be positive");
  if (halve_every < 1) problems.push_back("halve_every must be >= 1");
  if (batch_size < 1) problems.push_back("batch_size must be >= 1");
  if (repeats_per_epoch < 1) problems.push_back("repeats_per_epoch must be >= 1");
  if (!problems.empty()) {
    std::string msg = "invalid training options:";
    for (const auto& p : problems) msg += " " + p + ";";
    throw ValidationError(msg);
  }
}

double learning_rate_at(const TrainOptions& options, int epoch) {
  return options.lr * std::ldexp(1.0, -(epoch / options.halve_every));
}

namespace {

struct Batch {
  std::vector<Vector> x_t;
  std::vector<int> t;
  std::vector<std::int64_t> y;
  Matrix target;
};

Batch make_batch(std::span<const std::size_t> members, std::span<const Vector> latents,
                 std::span<const std::int64_t> indices, const NoiseSchedule& schedule, const DenoiserConfig& config,
                 Rng& noise_rng) {
  Batch b;
  const int tokens = config.tokens();
  b.target.resize(static_cast<Eigen::Index>(members.size()) * tokens, config.token_width());
  for (std::size_t k = 0; k < members.size(); ++k) {
    const std::size_t i = members[k];
    NoisedSample s = draw_noised(latents[i], schedule, noise_rng);
    b.x_t.push_back(std::move(s.x_t));
    b.t.push_back(s.t);
    b.y.push_back(indices[i]);
    b.target.middleRows(static_cast<Eigen::Index>(k) * tokens, tokens) =
        patchify(latents[i], config.latent_shape, config.patch_size);
  }
  return b;
}

void check_inputs(const Denoiser& model, std::span<const Vector> latents, std::span<const std::int64_t> indices) {
  if (latents.empty()) throw ValidationError("training set is empty");
  if (latents.size() != indices.size()) throw ValidationError("latents and indices differ in length");
  const auto& cfg = model.config();
  for (std::size_t i = 0; i < latents.size(); ++i) {
    if (latents[i].size() != cfg.latent_shape.numel()) {
      throw ValidationError("latent " + std::to_string(i) + " does not match latent shape " +
                            to_string(cfg.latent_shape));
    }
    if (indices[i] < 0 || indices[i] >= cfg.num_images) {
      throw OutOfRangeError("index " + std::to_string(indices[i]) + " outside [0, " +
                            std::to_string(cfg.num_images) + ")");
    }
  }
}

}  // namespace

std::vector<EpochLog> train_denoiser(Denoiser& model, std::span<const Vector> latents,
                                     std::span<const std::int64_t> indices, const NoiseSchedule& schedule,
                                     const TrainOptions& options, const EpochCallback& on_epoch) {
  options.validate();
  check_inputs(model, latents, indices);
  Rng data_rng(options.data_seed);
  Rng noise_rng(options.noise_seed);
  Adam adam;
  const ParamList params = model.parameters();
  std::vector<std::size_t> order(latents.size());
  std::vector<EpochLog> log;
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    EpochLog entry;
    entry.epoch = epoch;
    entry.lr = learning_rate_at(options, epoch);
    double loss_sum = 0.0;
    for (int rep = 0; rep < options.repeats_per_epoch; ++rep) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      data_rng.shuffle(std::span<std::size_t>(order));
      for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(options.batch_size)) {
        const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(options.batch_size));
        const auto members = std::span<const std::size_t>(order).subspan(begin, end - begin);
        Batch b = make_batch(members, latents, indices, schedule, model.config(), noise_rng);
        Tape tape;
        Var pred = model.forward(tape, b.x_t, b.t, b.y);
        Var loss = ag::mse(pred, b.target);
        const double value = loss.value()(0, 0);
        if (!std::isfinite(value)) {
          throw TrainingDivergedError("training diverged: loss is " + std::to_string(value) + " at epoch " +
                                      std::to_string(epoch) + ", step " + std::to_string(adam.steps()) +
                                      " (lr " + std::to_string(entry.lr) + ")");
        }
        tape.backward(loss);
        adam.step(params, tape, entry.lr);
        loss_sum += value;
        ++entry.steps;
      }
    }
    entry.mean_loss = loss_sum / static_cast<double>(entry.steps);
    entry.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    log.push_back(entry);
    if (on_epoch) on_epoch(entry);
  }
  return log;
}

double evaluate_loss(const Denoiser& model, std::span<const Vector> latents, std::span<const std::int64_t> indices,
                     const NoiseSchedule& schedule, std::uint64_t noise_seed, int draws_per_sample) {
  check_inputs(model, latents, indices);
  Rng noise_rng(noise_seed);
  std::vector<std::size_t> all(latents.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  double total = 0.0;
  for (int d = 0; d < draws_per_sample; ++d) {
    Batch b = make_batch(all, latents, indices, schedule, model.config(), noise_rng);
    Tape tape(false);
    total += ag::mse(model.forward(tape, b.x_t, b.t, b.y), b.target).value()(0, 0);
  }
  return total / draws_per_sample;
}

void write_loss_csv(const std::filesystem::path& path, std::span<const EpochLog> log) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw RuntimeError("cannot write " + path.string());
  out.precision(17);
  out << "epoch,lr,mean_loss,steps,seconds\n";
  for (const auto& e : log) {
    out << e.epoch << ',' << e.lr << ',' << e.mean_loss << ',' << e.steps << ',' << e.seconds << '\n';
  }
}

}  // namespace laduree
