#pragma once

#include "laduree/autograd.hpp"
#include "laduree/rng.hpp"
#include "laduree/tensor.hpp"

#include <cstdint>
#include <functional>
#include <string_view>
#include <vector>

namespace laduree {

/// Forward-process constants for timesteps t = 1..T. Index t - 1 of each
/// vector holds step t; alpha_bar_at(0) is defined as 1.
struct NoiseSchedule {
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;

  [[nodiscard]] int steps() const { return static_cast<int>(beta.size()); }
  [[nodiscard]] double beta_at(int t) const { return beta[check(t)]; }
  [[nodiscard]] double alpha_at(int t) const { return alpha[check(t)]; }
  [[nodiscard]] double alpha_bar_at(int t) const;

  /// Posterior variance beta_t (1 - abar_{t-1}) / (1 - abar_t).
  [[nodiscard]] double posterior_variance(int t) const;

 private:
  [[nodiscard]] std::size_t check(int t) const;
};

/// beta_t linearly interpolated from beta_start (t = 1) to beta_end (t = T).
NoiseSchedule linear_schedule(int steps, double beta_start, double beta_end);

/// Parameters of a linear schedule, as stored in configs and archives.
struct ScheduleSpec {
  int steps = 50;
  double beta_start = 1e-4;
  double beta_end = 0.02;

  [[nodiscard]] NoiseSchedule build() const { return linear_schedule(steps, beta_start, beta_end); }
  friend bool operator==(const ScheduleSpec&, const ScheduleSpec&) = default;
};

/// sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
Vector forward_sample(const Vector& x0, int t, const Vector& eps, const NoiseSchedule& schedule);

struct NoisedSample {
  int t = 0;
  Vector eps;
  Vector x_t;
};

/// Draws t uniform on {1..T} first, then eps ~ N(0, I), and forms x_t.
NoisedSample draw_noised(const Vector& x0, const NoiseSchedule& schedule, Rng& rng);

using X0Predictor = std::function<Vector(const Vector& x_t, int t, std::int64_t y)>;
using TapeX0Predictor = std::function<Var(Tape& tape, const Vector& x_t, int t, std::int64_t y)>;

/// MSE between predict_x0(x_t, t, y) and x0 for one random (t, eps).
double training_loss(const X0Predictor& predict_x0, const Vector& x0, std::int64_t y,
                     const NoiseSchedule& schedule, Rng& rng);

/// Differentiable form of training_loss. The prediction's row-major
/// elements are compared with x0.
Var training_loss(Tape& tape, const TapeX0Predictor& predict_x0, const Vector& x0, std::int64_t y,
                  const NoiseSchedule& schedule, Rng& rng);

/// One ancestral step with the forward-process posterior; returns x0_hat
/// exactly at t = 1.
Vector ddpm_step(const Vector& x_t, const Vector& x0_hat, int t, const NoiseSchedule& schedule,
                 const Vector& noise);

/// One DDIM step; eta = 0 is deterministic.
Vector ddim_step(const Vector& x_t, const Vector& x0_hat, int t, const NoiseSchedule& schedule,
                 double eta, const Vector& noise);

enum class SamplerKind : std::uint8_t { DDPM = 0, DDIM = 1 };

std::string_view to_string(SamplerKind kind);
SamplerKind parse_sampler_kind(std::string_view text);

struct SamplerOptions {
  SamplerKind kind = SamplerKind::DDIM;
  double eta = 0.0;
  std::uint64_t seed = 0;  // per-step noise stream
};

/// Runs the chosen step operator from t = T down to 1.
Vector sample(const X0Predictor& predict_x0, std::int64_t y, const Vector& initial_noise,
              const NoiseSchedule& schedule, const SamplerOptions& options);

}  // namespace laduree
