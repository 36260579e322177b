#include <benchmark/benchmark.h>

#include <random>

#include "fxrnn/layers.hpp"
#include "fxrnn/quant.hpp"

using namespace fxrnn;
using namespace fxrnn::ops;

namespace {

std::vector<double> gaussian(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 0.1);
  std::vector<double> v(n);
  for (double& x : v) x = g(rng);
  return v;
}

void BM_StepSizeSearch(benchmark::State& state) {
  const auto values = gaussian(static_cast<std::size_t>(state.range(0)), 1);
  for (auto _ : state) benchmark::DoNotOptimize(optimize_step_size(values, 2));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_StepSizeSearch)->Arg(1024)->Arg(16384)->Arg(65536)->Unit(benchmark::kMillisecond);

void BM_PackCodes(benchmark::State& state) {
  const int bits = static_cast<int>(state.range(0));
  std::mt19937_64 rng(2);
  std::vector<std::uint16_t> codes(65536);
  for (auto& c : codes) c = static_cast<std::uint16_t>(rng() % static_cast<unsigned>(level_count(bits)));
  for (auto _ : state) benchmark::DoNotOptimize(pack_codes(codes, bits));
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(codes.size() * sizeof(std::uint16_t)));
}
BENCHMARK(BM_PackCodes)->Arg(2)->Arg(3)->Arg(8);

void BM_Conv5x5(benchmark::State& state) {
  const Shape3 in{3, 32, 32};
  const int maps = 32;
  const auto input = gaussian(static_cast<std::size_t>(in.size()), 3);
  const auto weights = gaussian(static_cast<std::size_t>(maps * in.channels * 25), 4);
  const std::vector<double> bias(maps, 0.0);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d_forward(input, in, weights, bias, maps, 5));
}
BENCHMARK(BM_Conv5x5)->Unit(benchmark::kMicrosecond);

void BM_LstmStep(benchmark::State& state) {
  const int units = static_cast<int>(state.range(0));
  const int inputs = 64;
  const auto in_group = gaussian(static_cast<std::size_t>(4 * units * inputs), 5);
  const auto rec_group = gaussian(static_cast<std::size_t>(4 * units * units + 7 * units), 6);
  const auto w = LstmWeights::from_groups(in_group, rec_group, units, inputs);
  const auto x = gaussian(inputs, 7);
  const auto s = LstmState::zeros(units);
  for (auto _ : state) benchmark::DoNotOptimize(lstm_step(x, s, w));
}
BENCHMARK(BM_LstmStep)->Arg(32)->Arg(128)->Unit(benchmark::kMicrosecond);

}  // namespace
BENCHMARK_MAIN();
