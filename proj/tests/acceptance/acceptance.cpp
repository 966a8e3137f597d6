// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fail.
// Pass criterion numbers as arguments to run a subset.

#include "laduree/archive.hpp"
#include "laduree/codec.hpp"
#include "laduree/conditioning.hpp"
#include "laduree/denoiser.hpp"
#include "laduree/diffusion.hpp"
#include "laduree/dl_ledger.hpp"
#include "laduree/image.hpp"
#include "laduree/quantizer.hpp"
#include "laduree/rng.hpp"
#include "laduree/toy_images.hpp"
#include "test_support.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace laduree;
using laduree::testing::read_text;
using laduree::testing::TempDir;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// CLI plumbing -------------------------------------------------------------------

#ifdef LADUREE_CLI
constexpr const char* kCli = LADUREE_CLI;
#else
constexpr const char* kCli = nullptr;
#endif

laduree::testing::ProcessResult cli(const std::vector<std::string>& args, const fs::path& cwd = {}) {
  if (kCli == nullptr) throw std::runtime_error("the laduree CLI was not built");
  return laduree::testing::run_process(kCli, args, cwd);
}

laduree::testing::ProcessResult cli_ok(const std::vector<std::string>& args, const fs::path& cwd = {}) {
  auto r = cli(args, cwd);
  if (r.exit_code != 0) {
    throw std::runtime_error("laduree " + (args.empty() ? std::string() : args.front()) + " exited " +
                             std::to_string(r.exit_code) + ": " + r.err);
  }
  return r;
}

json last_event(const std::string& out, const std::string& name) {
  json found;
  std::istringstream in(out);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json e = json::parse(line);
    if (e["event"] == name) found = std::move(e);
  }
  if (found.is_null()) throw std::runtime_error("no '" + name + "' event in output");
  return found;
}

double number(const json& v) { return v.is_string() ? HUGE_VAL : v.get<double>(); }

/// The toy overfit run shared by criteria 1, 4 and 11: trained once through
/// the CLI, packed at 32 and 16 bits.
struct ToyRun {
  TempDir dir{"acceptance"};
  fs::path manifest, archive32, archive16;
  double train_seconds = 0;
};

ToyRun& toy_run() {
  static std::optional<ToyRun> run;
  if (run) return *run;
  run.emplace();
  ToyRun& r = *run;
  const fs::path images = r.dir / "images";
  r.manifest = r.dir / "manifest.csv";
  cli_ok({"synth", images.string(), "--count", "16", "--side", "32", "--seed", "7"});
  cli_ok({"prepare", images.string(), r.manifest.string(), "--seed", "0"});
  const auto t0 = std::chrono::steady_clock::now();
  cli_ok({"train",
          "--set", "manifest=" + r.manifest.string(),
          "--set", "output_dir=" + (r.dir / "run").string(),
          "--set", "backend=pixel",
          "--set", "hidden=96",
          "--set", "depth=6",
          "--set", "num_heads=8",
          "--set", "patch_size=4",
          "--set", "steps=50",
          "--set", "beta_end=0.2",
          "--set", "embedding=GRF",
          "--set", "conditioning=CAG",
          "--set", "epochs=50",
          "--set", "halve_every=10",
          "--set", "lr=0.001",
          "--set", "batch_size=16",
          "--set", "repeats_per_epoch=20",
          "--set", "init_seed=1"});
  r.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const std::string ckpt = (r.dir / "run" / "checkpoint.ldck").string();
  r.archive32 = r.dir / "model_e8m23.ldur";
  r.archive16 = r.dir / "model_e5m10.ldur";
  cli_ok({"pack", ckpt, r.archive32.string(), "--e", "8", "--m", "23"});
  cli_ok({"pack", ckpt, r.archive16.string(), "--e", "5", "--m", "10"});
  return r;
}

json verify_summary(const fs::path& archive, const fs::path& manifest) {
  return last_event(cli_ok({"verify", archive.string(), manifest.string()}).out, "summary");
}

// Criteria -----------------------------------------------------------------------

Outcome overfit_toy() {
  ToyRun& r = toy_run();
  const json s = verify_summary(r.archive32, r.manifest);
  const auto matched = s["matched"].get<std::int64_t>();
  const double psnr_db = number(s["mean_psnr"]);
  return {matched == 16 && psnr_db >= 22.0 && r.train_seconds <= 3 * 3600.0,
          fmt("matched %lld/16, mean PSNR %.2f dB, training %.0f s", static_cast<long long>(matched), psnr_db,
              r.train_seconds)};
}

/// Independent encoder on the raw float32 bit pattern, integer arithmetic only.
std::uint32_t reference_encode(float x, int e, int m) {
  const auto bits = std::bit_cast<std::uint32_t>(x);
  const std::uint32_t sign_code = (bits >> 31) << (e + m);
  std::uint32_t frac = bits & 0x7FFFFFu;
  const int biased = static_cast<int>((bits >> 23) & 0xFFu);
  if (biased == 0 && frac == 0) return sign_code;
  int exponent = biased - 127;
  if (biased == 0) {
    exponent = -126;
    while ((frac & 0x800000u) == 0) {
      frac <<= 1;
      --exponent;
    }
    frac &= 0x7FFFFFu;
  }
  const int bias = 1 << (e - 1);
  const int emin = -bias, emax = bias - 1;
  if (exponent > emax) return sign_code | (((1u << e) - 1u) << m) | ((1u << m) - 1u);
  if (exponent < emin - 1) return sign_code;
  if (exponent == emin - 1) return sign_code | 1u;
  const std::uint32_t kept = frac >> (23 - m);
  const auto field = static_cast<std::uint32_t>(exponent - emin);
  if (field == 0 && kept == 0) return sign_code | 1u;
  return sign_code | (field << m) | kept;
}

Outcome quantizer_oracle() {
  std::int64_t roundtrip_bad = 0;
  const QuantSpec half{5, 10};
  for (std::uint32_t c = 0; c < (1u << 16); ++c) {
    if (encode_value(static_cast<float>(decode_value(c, half)), half) != c) ++roundtrip_bad;
  }
  std::int64_t mismatches = 0, checked = 0;
  Rng rng(20261019);
  for (const QuantSpec spec : {QuantSpec{4, 7}, QuantSpec{5, 10}, QuantSpec{6, 12}, QuantSpec{8, 23}}) {
    for (int i = 0; i < 1000000;) {
      const float x = std::bit_cast<float>(static_cast<std::uint32_t>(rng.next_u64()));
      if (!std::isfinite(x)) continue;
      ++i;
      ++checked;
      if (encode_value(x, spec) != reference_encode(x, spec.e_bits, spec.m_bits)) ++mismatches;
    }
  }
  return {roundtrip_bad == 0 && mismatches == 0,
          fmt("round-trip failures %lld of 65536, reference mismatches %lld of %lld",
              static_cast<long long>(roundtrip_bad), static_cast<long long>(mismatches),
              static_cast<long long>(checked))};
}

Outcome size_ratio() {
  DenoiserConfig cfg;
  cfg.hidden = 96;
  cfg.depth = 6;
  cfg.num_heads = 8;
  cfg.patch_size = 4;
  cfg.latent_shape = {3, 32, 32};
  cfg.num_images = 16;
  CodecModel model{Denoiser(cfg, 3), ScheduleSpec{}, LatentNormalizer{}, LatentBackend::pixel_identity(),
                   Shape3{3, 32, 32}};
  const std::int64_t params = model.denoiser.trainable_count();
  const auto bits32 = archive_bits(compress(model, QuantSpec{8, 23})).total_bits;
  const auto bits14 = archive_bits(compress(model, QuantSpec{5, 8})).total_bits;
  const double ratio = static_cast<double>(bits32) / static_cast<double>(bits14);
  const double target = 32.0 / 14.0;
  const double rel = std::abs(ratio - target) / target;
  return {params >= 100000 && rel <= 0.01,
          fmt("P=%lld, 32-bit %lld bits, 14-bit %lld bits, ratio %.4f vs %.4f (%.3f%% off)",
              static_cast<long long>(params), static_cast<long long>(bits32), static_cast<long long>(bits14), ratio,
              target, 100 * rel)};
}

Outcome quantization_robustness() {
  ToyRun& r = toy_run();
  const json s32 = verify_summary(r.archive32, r.manifest);
  const json s16 = verify_summary(r.archive16, r.manifest);
  const auto matched = s16["matched"].get<std::int64_t>();
  const double drop = number(s32["mean_psnr"]) - number(s16["mean_psnr"]);
  return {matched == 16 && drop <= 2.0,
          fmt("16-bit matched %lld/16, PSNR 32-bit %.2f dB, 16-bit %.2f dB, drop %.3f dB",
              static_cast<long long>(matched), number(s32["mean_psnr"]), number(s16["mean_psnr"]), drop)};
}

Outcome dl_arithmetic() {
  const auto t0 = std::chrono::steady_clock::now();
  const DLReport r = dl_unicorn(4000, 0);
  const OnlineBits ob = per_image_online_bits(4000);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  // 4000 = 2^5 * 125.
  const double log2_4000 = 5.0 + std::log2(125.0);
  const double expected = 4000.0 * log2_4000;
  const double rel = std::abs(r.index_or_code_bits - expected) / expected;
  const bool ok = rel <= 1e-6 && std::abs(ob.ideal - log2_4000) <= 1e-12 && ob.fixed_length == 12 &&
                  r.total_bits == r.index_or_code_bits && seconds < 1.0;
  return {ok, fmt("index term %.6f (rel err %.2e), online bits (%.9f, %lld), %.2e s", r.index_or_code_bits, rel,
                  ob.ideal, static_cast<long long>(ob.fixed_length), seconds)};
}

Outcome parameter_accounting() {
  int exact = 0, ordered = 0;
  std::string bad;
  for (auto emb : {EmbeddingKind::GRF, EmbeddingKind::EDF, EmbeddingKind::LET, EmbeddingKind::MLP}) {
    std::vector<std::int64_t> counts;
    for (auto cond : {ConditioningKind::ICC, ConditioningKind::CA, ConditioningKind::CAG, ConditioningKind::ALNZ}) {
      DenoiserConfig cfg;
      cfg.hidden = 96;
      cfg.depth = 4;
      cfg.num_heads = 8;
      cfg.num_images = 64;
      cfg.embedding = emb;
      cfg.conditioning = cond;
      const std::int64_t analytic = total_param_count(cfg);
      const std::int64_t measured = Denoiser(cfg, 0).trainable_count();
      if (analytic == measured) ++exact;
      else bad += fmt(" %s/%s %lld!=%lld", std::string(to_string(emb)).c_str(), std::string(to_string(cond)).c_str(),
                      static_cast<long long>(analytic), static_cast<long long>(measured));
      counts.push_back(measured);
    }
    bool increasing = true;
    for (std::size_t i = 1; i < counts.size(); ++i) increasing = increasing && counts[i - 1] < counts[i];
    ordered += increasing ? 1 : 0;
  }
  return {exact == 16 && ordered == 4, fmt("exact %d/16, ICC<CA<CAG<ALNZ for %d/4 embeddings%s", exact, ordered,
                                           bad.c_str())};
}

Outcome sampler_oracle() {
  const NoiseSchedule sched = ScheduleSpec{}.build();
  Rng rng(31);
  double worst = 0;
  bool ddpm_exact = true;
  for (int trial = 0; trial < 20; ++trial) {
    Vector x0(48);
    for (auto& v : x0) v = 2 * rng.uniform() - 1;
    const X0Predictor oracle = [&](const Vector&, int, std::int64_t) { return x0; };
    Vector noise(48);
    rng.fill_normal(std::span<double>(noise.data(), noise.size()));
    SamplerOptions opts;
    opts.kind = SamplerKind::DDIM;
    opts.eta = 0.0;
    opts.seed = static_cast<std::uint64_t>(trial);
    worst = std::max(worst, (sample(oracle, 0, noise, sched, opts) - x0).cwiseAbs().maxCoeff());

    Vector x1(48), step_noise(48);
    rng.fill_normal(std::span<double>(x1.data(), x1.size()));
    rng.fill_normal(std::span<double>(step_noise.data(), step_noise.size()));
    if (ddpm_step(x1, x0, 1, sched, step_noise) != x0) ddpm_exact = false;
    opts.kind = SamplerKind::DDPM;
    if (sample(oracle, 0, noise, sched, opts) != x0) ddpm_exact = false;
  }
  return {worst <= 1e-5 && ddpm_exact,
          fmt("DDIM max-abs error %.3e over 20 seeds, DDPM final step exact: %s", worst, ddpm_exact ? "yes" : "no")};
}

Outcome forward_statistics() {
  const NoiseSchedule sched = ScheduleSpec{}.build();
  const Vector x0 = (Vector(4) << 0.9, -0.4, 0.0, 0.25).finished();
  const int draws = 10000;
  Rng rng(77);
  int within = 0, total = 0;
  double worst_z = 0;
  for (int t : {1, 25, 50}) {
    std::vector<Vector> xs;
    xs.reserve(draws);
    for (int i = 0; i < draws; ++i) {
      Vector eps(x0.size());
      rng.fill_normal(std::span<double>(eps.data(), eps.size()));
      xs.push_back(forward_sample(x0, t, eps, sched));
    }
    const double ab = sched.alpha_bar_at(t);
    const double var_true = 1 - ab;
    for (Eigen::Index k = 0; k < x0.size(); ++k) {
      double mean = 0;
      for (const auto& x : xs) mean += x[k];
      mean /= draws;
      double var = 0;
      for (const auto& x : xs) var += (x[k] - mean) * (x[k] - mean);
      var /= draws - 1;
      // Standard errors of the sample mean and variance of a Gaussian.
      const double se_mean = std::sqrt(var_true / draws);
      const double se_var = var_true * std::sqrt(2.0 / (draws - 1));
      const double z_mean = std::abs(mean - std::sqrt(ab) * x0[k]) / se_mean;
      const double z_var = std::abs(var - var_true) / se_var;
      worst_z = std::max({worst_z, z_mean, z_var});
      within += (z_mean <= 3 ? 1 : 0) + (z_var <= 3 ? 1 : 0);
      total += 2;
    }
  }
  return {within == total, fmt("%d/%d statistics within 3 standard errors (worst %.2f)", within, total, worst_z)};
}

Outcome normalization_ordering() {
  const auto images = make_toy_images(8, 16, 5);
  std::vector<std::string> ids;
  for (int i = 0; i < 8; ++i) ids.push_back("toy" + std::to_string(i));
  const IndexImageDataset ds = make_dataset(images, ids, 2);

  auto run_with = [&](double target_std) {
    CodecSetup setup;
    setup.denoiser.hidden = 32;
    setup.denoiser.depth = 2;
    setup.denoiser.num_heads = 4;
    setup.denoiser.patch_size = 4;
    setup.schedule = ScheduleSpec{50, 1e-4, 0.2};
    setup.train.epochs = 20;
    setup.train.lr = 2e-3;
    setup.train.halve_every = 8;
    setup.train.batch_size = 8;
    setup.train.repeats_per_epoch = 20;
    setup.init_seed = 4;
    setup.target_std = target_std;
    const CodecModel model = train_codec(ds, LatentBackend::pixel_identity(), setup);
    const Decoder decoder(model);
    double sum = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      sum += mse(decoder.decode(ds.entries[i].index), ds.images[i]);
    }
    return sum / static_cast<double>(ds.size());
  };
  const double mse_one = run_with(1.0);
  const double mse_third = run_with(1.0 / 3.0);
  return {mse_third < mse_one, fmt("reconstruction MSE: std 1 -> %.6f, std 1/3 -> %.6f", mse_one, mse_third)};
}

Outcome gate_zero() {
  Rng rng(5);
  const int h = 96, len = 16, n = 2;
  Matrix tokens(n * len, h), cond(n, h), cond2(n, h);
  for (Eigen::Index i = 0; i < tokens.size(); ++i) tokens.data()[i] = rng.normal();
  for (Eigen::Index i = 0; i < cond.size(); ++i) cond.data()[i] = rng.normal();
  for (Eigen::Index i = 0; i < cond2.size(); ++i) cond2.data()[i] = 10 * rng.normal();
  int identical = 0, total = 0;
  for (auto kind : {ConditioningKind::CAG, ConditioningKind::ALNZ}) {
    ConditioningSpec spec;
    spec.kind = kind;
    spec.hidden_size = h;
    spec.num_heads = 8;
    for (std::uint64_t seed : {0u, 1u, 2u}) {
      const TransformerBlock block = make_block(spec, seed);
      Tape tape(false);
      const Matrix ablated = block.forward_unconditioned(tape, tape.constant(tokens), len).value();
      for (const Matrix* c : {&cond, &cond2}) {
        ++total;
        identical += block.forward(tape, tape.constant(tokens), len, tape.constant(*c)).value() == ablated ? 1 : 0;
      }
    }
    // Whole denoiser: the index cannot change a fresh model's prediction.
    DenoiserConfig cfg;
    cfg.hidden = 32;
    cfg.depth = 2;
    cfg.num_heads = 4;
    cfg.latent_shape = {3, 8, 8};
    cfg.num_images = 10;
    cfg.conditioning = kind;
    const Denoiser d(cfg, 9);
    Vector x(3 * 8 * 8);
    rng.fill_normal(std::span<double>(x.data(), x.size()));
    const Vector ref = d.predict_x0(x, 20, 0);
    for (std::int64_t y = 1; y < 10; ++y) {
      ++total;
      identical += d.predict_x0(x, 20, y) == ref ? 1 : 0;
    }
  }
  return {identical == total, fmt("%d/%d condition-ablated comparisons bit-identical", identical, total)};
}

Outcome receiver_sufficiency() {
  ToyRun& r = toy_run();
  TempDir clean("receiver");
  fs::copy_file(r.archive16, clean / "model.ldur");
  int identical = 0, total = 0;
  for (const auto& [index, seed] : std::vector<std::pair<int, int>>{{0, 0}, {7, 3}, {15, 12345}}) {
    const std::string a = fmt("a_%d_%d.png", index, seed), b = fmt("b_%d_%d.png", index, seed);
    for (const auto& name : {a, b}) {
      cli_ok({"decode", "model.ldur", name, "--index", std::to_string(index), "--seed", std::to_string(seed)},
             clean.path());
    }
    ++total;
    const std::string bytes = read_text(clean / a);
    identical += !bytes.empty() && bytes == read_text(clean / b) ? 1 : 0;
  }
  std::set<std::string> files;
  for (const auto& e : fs::directory_iterator(clean.path())) files.insert(e.path().filename().string());
  const bool only_outputs = files.size() == 1 + 2 * static_cast<std::size_t>(total);
  return {identical == total && only_outputs,
          fmt("%d/%d repeated decodes bit-identical from the archive alone, %zu files in the clean directory",
              identical, total, files.size())};
}

struct Criterion {
  int id;
  const char* name;
  Outcome (*run)();
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {1, "overfit codec at toy scale", overfit_toy},
      {2, "quantizer oracle equivalence", quantizer_oracle},
      {3, "32-bit vs 14-bit model size ratio", size_ratio},
      {4, "16-bit quantization robustness", quantization_robustness},
      {5, "description-length arithmetic", dl_arithmetic},
      {6, "parameter accounting", parameter_accounting},
      {7, "sampler oracle", sampler_oracle},
      {8, "forward-process statistics", forward_statistics},
      {9, "latent normalization ordering", normalization_ordering},
      {10, "gate-zero identities", gate_zero},
      {11, "receiver sufficiency and determinism", receiver_sufficiency},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.contains(c.id)) continue;
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << c.id << " (" << c.name << "): " << o.detail
              << fmt(" [%.1f s]", secs) << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
