#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "nfgen/discretize.hpp"
#include "nfgen/ingest.hpp"
#include "nfgen/model.hpp"
#include "nfgen/synth.hpp"

using namespace nfgen;

namespace {

ModelConfig bench_model(int hidden, int layers) {
  ModelConfig c;
  c.layers = layers;
  c.heads = 2;
  c.hidden = hidden;
  c.ff = 4 * hidden;
  c.max_len = 512;
  c.nodes = 8;
  c.customers = 2;
  c.dropout = 0.1;
  return c;
}

std::vector<std::uint8_t> random_tokens(const ModelConfig& c, int length) {
  std::mt19937 rng(5);
  std::uniform_int_distribution<int> d(0, c.bins - 1);
  std::vector<std::uint8_t> toks(static_cast<std::size_t>(length) * c.features);
  for (auto& t : toks) t = static_cast<std::uint8_t>(d(rng));
  return toks;
}

void BM_Forward(benchmark::State& state) {
  const auto cfg = bench_model(static_cast<int>(state.range(1)), 2);
  Model m(cfg);
  m.init_random(1);
  const int T = static_cast<int>(state.range(0));
  const auto toks = random_tokens(cfg, T);
  const SequenceView seq{0, 0, 28'000'000, T, toks};
  for (auto _ : state) benchmark::DoNotOptimize(m.forward(seq));
  state.SetItemsProcessed(state.iterations() * T);
}
BENCHMARK(BM_Forward)->Args({128, 32})->Args({512, 32})->Args({512, 128})->Unit(benchmark::kMillisecond);

void BM_ForwardBackward(benchmark::State& state) {
  const auto cfg = bench_model(static_cast<int>(state.range(1)), 2);
  Model m(cfg);
  m.init_random(1);
  const int T = static_cast<int>(state.range(0));
  const auto toks = random_tokens(cfg, T);
  const SequenceView seq{0, 0, 28'000'000, T, toks};
  Model::Vec grad = Model::Vec::Zero(static_cast<Eigen::Index>(m.parameter_count()));
  std::uint64_t s = 0;
  for (auto _ : state) benchmark::DoNotOptimize(m.sequence_loss(seq, Mode::train, ++s, &grad));
  state.SetItemsProcessed(state.iterations() * T);
}
BENCHMARK(BM_ForwardBackward)->Args({128, 32})->Args({512, 32})->Args({512, 128})->Unit(benchmark::kMillisecond);

void BM_FitBins(benchmark::State& state) {
  std::mt19937 rng(3);
  std::lognormal_distribution<double> d(2.0, 1.5);
  std::vector<double> series(static_cast<std::size_t>(state.range(0)));
  for (auto& x : series) x = rng() % 3 == 0 ? 0.0 : std::floor(d(rng));
  for (auto _ : state) benchmark::DoNotOptimize(fit_bins(series, 10));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_FitBins)->Arg(1 << 12)->Arg(1 << 15)->Arg(1 << 18);

void BM_Accumulate(benchmark::State& state) {
  SynthConfig c;
  c.nodes = 16;
  c.customers = 4;
  c.span_minutes = 600;
  c.seed = 9;
  c.attack_regions = {{2, 100, 500}};
  const SyntheticTraffic gen(c);
  std::vector<FlowRecord> records;
  gen.generate([&](std::span<const FlowRecord> b) { records.insert(records.end(), b.begin(), b.end()); });
  const auto reg = gen.registry();
  const auto schema = FeatureSchema::full();
  for (auto _ : state) {
    Accumulator acc(reg, schema, {c.start_minute, c.start_minute + c.span_minutes});
    acc.add(records);
    benchmark::DoNotOptimize(acc.take());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(records.size()));
}
BENCHMARK(BM_Accumulate)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
