#include "laduree/quantizer.hpp"
#include "laduree/rng.hpp"

#include <benchmark/benchmark.h>

#include <cstdint>
#include <vector>

namespace {

std::vector<float> random_weights(std::size_t n) {
  laduree::Rng rng(1);
  std::vector<float> w(n);
  for (auto& v : w) v = static_cast<float>(0.05 * rng.normal());
  return w;
}

void BM_EncodeValue(benchmark::State& state) {
  const laduree::QuantSpec spec{static_cast<int>(state.range(0)), static_cast<int>(state.range(1))};
  const auto w = random_weights(1 << 16);
  for (auto _ : state) {
    std::uint32_t acc = 0;
    for (float x : w) acc ^= laduree::encode_value(x, spec);
    benchmark::DoNotOptimize(acc);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(w.size()));
}
BENCHMARK(BM_EncodeValue)->Args({5, 10})->Args({5, 8})->Args({8, 23});

void BM_DecodeValue(benchmark::State& state) {
  const laduree::QuantSpec spec{5, 10};
  for (auto _ : state) {
    double acc = 0;
    for (std::uint32_t c = 0; c < (1u << 16); ++c) acc += laduree::decode_value(c, spec);
    benchmark::DoNotOptimize(acc);
  }
  state.SetItemsProcessed(state.iterations() * (1 << 16));
}
BENCHMARK(BM_DecodeValue);

void BM_PackBits(benchmark::State& state) {
  const int bits = static_cast<int>(state.range(0));
  laduree::Rng rng(2);
  std::vector<std::uint32_t> codes(1 << 18);
  for (auto& c : codes) c = static_cast<std::uint32_t>(rng.next_u64()) & ((1u << bits) - 1u);
  for (auto _ : state) benchmark::DoNotOptimize(laduree::pack_bits(codes, bits));
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(codes.size()) * bits / 8);
}
BENCHMARK(BM_PackBits)->Arg(14)->Arg(16)->Arg(32);

void BM_UnpackBits(benchmark::State& state) {
  const int bits = static_cast<int>(state.range(0));
  laduree::Rng rng(3);
  std::vector<std::uint32_t> codes(1 << 18);
  for (auto& c : codes) c = static_cast<std::uint32_t>(rng.next_u64()) & ((1u << bits) - 1u);
  const auto bytes = laduree::pack_bits(codes, bits);
  for (auto _ : state) benchmark::DoNotOptimize(laduree::unpack_bits(bytes, codes.size(), bits));
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(bytes.size()));
}
BENCHMARK(BM_UnpackBits)->Arg(14)->Arg(16)->Arg(32);

}  // namespace

BENCHMARK_MAIN();
