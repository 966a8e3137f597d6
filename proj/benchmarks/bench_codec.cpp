#include "laduree/archive.hpp"
#include "laduree/codec.hpp"
#include "laduree/denoiser.hpp"
#include "laduree/diffusion.hpp"
#include "laduree/rng.hpp"
#include "laduree/training.hpp"

#include <benchmark/benchmark.h>

#include <vector>

namespace {

using namespace laduree;

DenoiserConfig toy_config(int hidden, int depth, ConditioningKind cond) {
  DenoiserConfig cfg;
  cfg.hidden = hidden;
  cfg.depth = depth;
  cfg.num_heads = 8;
  cfg.patch_size = 4;
  cfg.latent_shape = {3, 32, 32};
  cfg.num_images = 16;
  cfg.conditioning = cond;
  return cfg;
}

Vector noise_vector(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Vector v(static_cast<Eigen::Index>(n));
  rng.fill_normal(std::span<double>(v.data(), v.size()));
  return v;
}

void BM_PredictX0(benchmark::State& state) {
  const auto cond = static_cast<ConditioningKind>(state.range(1));
  const Denoiser d(toy_config(static_cast<int>(state.range(0)), 6, cond), 0);
  const Vector x = noise_vector(3 * 32 * 32, 1);
  for (auto _ : state) benchmark::DoNotOptimize(d.predict_x0(x, 25, 3));
  state.SetLabel(std::string(to_string(cond)));
}
BENCHMARK(BM_PredictX0)
    ->ArgsProduct({{32, 96}, {static_cast<int>(ConditioningKind::ICC), static_cast<int>(ConditioningKind::CA),
                              static_cast<int>(ConditioningKind::CAG), static_cast<int>(ConditioningKind::ALNZ)}})
    ->Unit(benchmark::kMillisecond);

void BM_TrainEpoch(benchmark::State& state) {
  const int batch = static_cast<int>(state.range(0));
  std::vector<Vector> latents;
  std::vector<std::int64_t> indices;
  for (int i = 0; i < 16; ++i) {
    latents.push_back(0.3 * noise_vector(3 * 32 * 32, 100 + static_cast<std::uint64_t>(i)));
    indices.push_back(i);
  }
  const NoiseSchedule sched = ScheduleSpec{50, 1e-4, 0.2}.build();
  TrainOptions opts;
  opts.epochs = 1;
  opts.batch_size = batch;
  opts.lr = 1e-3;
  for (auto _ : state) {
    state.PauseTiming();
    Denoiser d(toy_config(96, 6, ConditioningKind::CAG), 0);
    state.ResumeTiming();
    benchmark::DoNotOptimize(train_denoiser(d, latents, indices, sched, opts));
  }
  state.SetItemsProcessed(state.iterations() * 16);
}
BENCHMARK(BM_TrainEpoch)->Arg(4)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_Sample(benchmark::State& state) {
  const Denoiser d(toy_config(96, 6, ConditioningKind::CAG), 0);
  const NoiseSchedule sched = ScheduleSpec{static_cast<int>(state.range(0)), 1e-4, 0.2}.build();
  const Vector noise = noise_vector(3 * 32 * 32, 2);
  const X0Predictor f = [&](const Vector& x, int t, std::int64_t y) { return d.predict_x0(x, t, y); };
  for (auto _ : state) benchmark::DoNotOptimize(sample(f, 5, noise, sched, SamplerOptions{}));
}
BENCHMARK(BM_Sample)->Arg(10)->Arg(50)->Unit(benchmark::kMillisecond);

CodecModel untrained_model() {
  return CodecModel{Denoiser(toy_config(96, 6, ConditioningKind::CAG), 0), ScheduleSpec{}, LatentNormalizer{},
                    LatentBackend::pixel_identity(), Shape3{3, 32, 32}};
}

void BM_Compress(benchmark::State& state) {
  const CodecModel model = untrained_model();
  const QuantSpec spec{static_cast<int>(state.range(0)), static_cast<int>(state.range(1))};
  for (auto _ : state) benchmark::DoNotOptimize(serialize_archive(compress(model, spec)));
  state.SetItemsProcessed(state.iterations() * model.denoiser.trainable_count());
}
BENCHMARK(BM_Compress)->Args({5, 10})->Args({8, 23})->Unit(benchmark::kMillisecond);

void BM_LoadDecoder(benchmark::State& state) {
  const auto bytes = serialize_archive(compress(untrained_model(), QuantSpec{5, 10}));
  for (auto _ : state) {
    const Archive archive = parse_archive(bytes);
    benchmark::DoNotOptimize(Decoder(archive).num_images());
  }
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(bytes.size()));
}
BENCHMARK(BM_LoadDecoder)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
