#include "laduree/training.hpp"

#include "laduree/errors.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <string>

namespace laduree {
namespace {

DenoiserConfig tiny_config(std::int64_t m) {
  DenoiserConfig c;
  c.depth = 1;
  c.hidden = 16;
  c.num_heads = 2;
  c.patch_size = 2;
  c.latent_shape = {3, 4, 4};
  c.num_images = m;
  return c;
}

std::vector<Vector> random_latents(int count, Rng& rng) {
  std::vector<Vector> out;
  for (int i = 0; i < count; ++i) {
    Vector v(48);
    for (auto& x : v) x = rng.normal() / 3.0;
    out.push_back(v);
  }
  return out;
}

TEST(TrainingTest, LearningRateSchedule) {
  TrainOptions o;
  for (int e = 0; e < 10; ++e) EXPECT_EQ(learning_rate_at(o, e), 2e-4);
  for (int e = 10; e < 20; ++e) EXPECT_EQ(learning_rate_at(o, e), 1e-4);
  EXPECT_EQ(learning_rate_at(o, 49), 2e-4 / 16);
}

TEST(TrainingTest, OptionsValidation) {
  TrainOptions o;
  o.epochs = 0;
  EXPECT_THROW(o.validate(), ValidationError);
  o = {};
  o.batch_size = 0;
  EXPECT_THROW(o.validate(), ValidationError);
  o = {};
  o.lr = -1;
  EXPECT_THROW(o.validate(), ValidationError);
}

TEST(TrainingTest, SingleImageLossDecreases) {
  Rng rng(1);
  const auto latents = random_latents(1, rng);
  const std::vector<std::int64_t> indices{0};
  Denoiser model = build_denoiser(tiny_config(1), 2);
  const NoiseSchedule schedule = ScheduleSpec{}.build();
  const double before = evaluate_loss(model, latents, indices, schedule, 9);
  TrainOptions o;
  o.epochs = 30;
  o.lr = 3e-3;
  o.repeats_per_epoch = 4;
  int callbacks = 0;
  const auto log = train_denoiser(model, latents, indices, schedule, o, [&](const EpochLog&) { ++callbacks; });
  EXPECT_EQ(callbacks, 30);
  ASSERT_EQ(log.size(), 30u);
  EXPECT_EQ(log[0].steps, 4);
  const double after = evaluate_loss(model, latents, indices, schedule, 9);
  EXPECT_LT(after, 0.5 * before);
}

TEST(TrainingTest, TrainingIsDeterministic) {
  Rng rng(3);
  const auto latents = random_latents(3, rng);
  const std::vector<std::int64_t> indices{2, 0, 1};
  const NoiseSchedule schedule = ScheduleSpec{}.build();
  TrainOptions o;
  o.epochs = 3;
  o.batch_size = 2;
  o.lr = 1e-3;
  Denoiser a = build_denoiser(tiny_config(3), 4), b = build_denoiser(tiny_config(3), 4);
  const auto la = train_denoiser(a, latents, indices, schedule, o);
  const auto lb = train_denoiser(b, latents, indices, schedule, o);
  for (std::size_t i = 0; i < la.size(); ++i) EXPECT_EQ(la[i].mean_loss, lb[i].mean_loss);
  const auto ta = a.export_tensors(), tb = b.export_tensors();
  for (std::size_t i = 0; i < ta.size(); ++i) EXPECT_EQ(ta[i].data, tb[i].data);
}

TEST(TrainingTest, TrainedModelDependsOnIndex) {
  Rng rng(5);
  const auto latents = random_latents(2, rng);
  const std::vector<std::int64_t> indices{0, 1};
  const NoiseSchedule schedule = linear_schedule(50, 1e-4, 0.2);
  DenoiserConfig cfg = tiny_config(2);
  Denoiser model = build_denoiser(cfg, 6);
  TrainOptions o;
  o.epochs = 10;
  o.lr = 3e-3;
  o.repeats_per_epoch = 5;
  (void)train_denoiser(model, latents, indices, schedule, o);
  const Vector x = latents[0] * 0.1;
  const double diff = (model.predict_x0(x, 40, 0) - model.predict_x0(x, 40, 1)).squaredNorm();
  EXPECT_GT(diff, 0.0);
}

TEST(TrainingTest, RejectsMismatchedInputs) {
  Rng rng(7);
  const auto latents = random_latents(2, rng);
  const std::vector<std::int64_t> one{0};
  Denoiser model = build_denoiser(tiny_config(2), 1);
  EXPECT_THROW((void)train_denoiser(model, latents, one, ScheduleSpec{}.build(), TrainOptions{}), ValidationError);
}

TEST(TrainingTest, LossCsv) {
  testing::TempDir dir("train");
  const std::vector<EpochLog> log{{0, 2e-4, 0.5, 3, 0.1}, {1, 2e-4, 0.25, 3, 0.1}};
  write_loss_csv(dir / "loss.csv", log);
  std::ifstream in(dir / "loss.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "epoch,lr,mean_loss,steps,seconds");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 2);
}

}  // namespace
}  // namespace laduree
