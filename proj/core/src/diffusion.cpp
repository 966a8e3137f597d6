#include "laduree/diffusion.hpp"

#include "laduree/errors.hpp"

#include <cmath>

namespace laduree {

std::size_t NoiseSchedule::check(int t) const {
  if (t < 1 || t > steps()) {
    throw OutOfRangeError("timestep " + std::to_string(t) + " outside [1, " +
                          std::to_string(steps()) + "]");
  }
  return static_cast<std::size_t>(t - 1);
}

double NoiseSchedule::alpha_bar_at(int t) const {
  if (t == 0) return 1.0;
  return alpha_bar[check(t)];
}

double NoiseSchedule::posterior_variance(int t) const {
  return beta_at(t) * (1.0 - alpha_bar_at(t - 1)) / (1.0 - alpha_bar_at(t));
}

NoiseSchedule linear_schedule(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw ValidationError("schedule needs T >= 1");
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
    throw ValidationError("schedule needs 0 < beta_start <= beta_end < 1");
  }
  NoiseSchedule s;
  s.beta.resize(steps);
  s.alpha.resize(steps);
  s.alpha_bar.resize(steps);
  double running = 1.0;
  for (int i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
    s.beta[i] = beta_start + (beta_end - beta_start) * frac;
    s.alpha[i] = 1.0 - s.beta[i];
    running *= s.alpha[i];
    s.alpha_bar[i] = running;
  }
  return s;
}

Vector forward_sample(const Vector& x0, int t, const Vector& eps, const NoiseSchedule& schedule) {
  if (x0.size() != eps.size()) throw ValidationError("forward_sample: eps shape mismatch");
  if (t == 0) throw OutOfRangeError("forward_sample: t must be >= 1");
  const double ab = schedule.alpha_bar_at(t);
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

NoisedSample draw_noised(const Vector& x0, const NoiseSchedule& schedule, Rng& rng) {
  NoisedSample s;
  s.t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(schedule.steps())));
  s.eps.resize(x0.size());
  rng.fill_normal({s.eps.data(), static_cast<std::size_t>(s.eps.size())});
  s.x_t = forward_sample(x0, s.t, s.eps, schedule);
  return s;
}

double training_loss(const X0Predictor& predict_x0, const Vector& x0, std::int64_t y,
                     const NoiseSchedule& schedule, Rng& rng) {
  const NoisedSample s = draw_noised(x0, schedule, rng);
  const Vector pred = predict_x0(s.x_t, s.t, y);
  if (pred.size() != x0.size()) throw ValidationError("predictor output shape mismatch");
  return (pred - x0).squaredNorm() / static_cast<double>(x0.size());
}

Var training_loss(Tape& tape, const TapeX0Predictor& predict_x0, const Vector& x0, std::int64_t y,
                  const NoiseSchedule& schedule, Rng& rng) {
  const NoisedSample s = draw_noised(x0, schedule, rng);
  const Var pred = predict_x0(tape, s.x_t, s.t, y);
  if (pred.value().size() != x0.size()) throw ValidationError("predictor output shape mismatch");
  const Matrix target = Eigen::Map<const Matrix>(x0.data(), pred.rows(), pred.cols());
  return ag::mse(pred, target);
}

Vector ddpm_step(const Vector& x_t, const Vector& x0_hat, int t, const NoiseSchedule& schedule,
                 const Vector& noise) {
  const double ab_t = schedule.alpha_bar_at(t);
  if (t == 1) return x0_hat;
  const double ab_prev = schedule.alpha_bar_at(t - 1);
  const double beta = schedule.beta_at(t);
  const double c_x0 = std::sqrt(ab_prev) * beta / (1.0 - ab_t);
  const double c_xt = std::sqrt(schedule.alpha_at(t)) * (1.0 - ab_prev) / (1.0 - ab_t);
  const double sigma = std::sqrt(schedule.posterior_variance(t));
  return c_x0 * x0_hat + c_xt * x_t + sigma * noise;
}

Vector ddim_step(const Vector& x_t, const Vector& x0_hat, int t, const NoiseSchedule& schedule,
                 double eta, const Vector& noise) {
  if (eta < 0.0 || eta > 1.0) throw ValidationError("ddim eta must lie in [0, 1]");
  const double ab_t = schedule.alpha_bar_at(t);
  const double ab_prev = schedule.alpha_bar_at(t - 1);
  const Vector eps_hat = (x_t - std::sqrt(ab_t) * x0_hat) / std::sqrt(1.0 - ab_t);
  const double sigma =
      eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab_t)) * std::sqrt(schedule.beta_at(t));
  const double dir = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma));
  Vector out = std::sqrt(ab_prev) * x0_hat + dir * eps_hat;
  if (sigma > 0.0) out += sigma * noise;
  return out;
}

std::string_view to_string(SamplerKind kind) {
  return kind == SamplerKind::DDPM ? "DDPM" : "DDIM";
}

SamplerKind parse_sampler_kind(std::string_view text) {
  if (text == "DDPM" || text == "ddpm") return SamplerKind::DDPM;
  if (text == "DDIM" || text == "ddim") return SamplerKind::DDIM;
  throw ValidationError("unknown sampler '" + std::string(text) + "' (DDPM|DDIM)");
}

Vector sample(const X0Predictor& predict_x0, std::int64_t y, const Vector& initial_noise,
              const NoiseSchedule& schedule, const SamplerOptions& options) {
  Rng rng(options.seed);
  Vector x = initial_noise;
  Vector noise = Vector::Zero(x.size());
  for (int t = schedule.steps(); t >= 1; --t) {
    const Vector x0_hat = predict_x0(x, t, y);
    const bool stochastic = t > 1 && (options.kind == SamplerKind::DDPM || options.eta > 0.0);
    if (stochastic) rng.fill_normal({noise.data(), static_cast<std::size_t>(noise.size())});
    x = options.kind == SamplerKind::DDPM ? ddpm_step(x, x0_hat, t, schedule, noise)
                                          : ddim_step(x, x0_hat, t, schedule, options.eta, noise);
  }
  return x;
}

}  // namespace laduree
