#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace laduree {

/// Seeded random stream with a fully specified output sequence.
///
/// The standard distributions (std::normal_distribution and friends) are
/// implementation-defined, so two toolchains would disagree on GRF
/// frequencies or decoder noise. Everything here is derived from raw
/// mt19937_64 words, which the standard pins down exactly.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform();

  /// Uniform integer in [0, bound). Rejection sampling, bound > 0.
  std::uint64_t below(std::uint64_t bound);

  /// Standard normal via Box-Muller; pairs are cached.
  double normal();

  void fill_normal(std::span<double> out);

  /// Fisher-Yates from the back: for i = n-1..1 swap(i, below(i+1)).
  template <typename T>
  void shuffle(std::span<T> values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(values[i - 1], values[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

/// splitmix64 finalizer; derives independent sub-seeds from one seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace laduree
