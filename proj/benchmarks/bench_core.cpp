#include <benchmark/benchmark.h>

#include <vector>

#include "tracetrust/actv.hpp"
#include "tracetrust/infotheory.hpp"
#include "tracetrust/probes.hpp"
#include "tracetrust/rng.hpp"
#include "tracetrust/toylm.hpp"

namespace tt = tracetrust;

namespace {

tt::Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  tt::Rng rng(seed);
  tt::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
  }
  return m;
}

// Blobs at -1 and +1 on axis 0, labels alternating.
tt::ActivationDataset blobs(std::size_t n, std::size_t d, std::uint64_t seed) {
  tt::Rng rng(seed);
  std::vector<float> values(n * d);
  std::vector<std::uint8_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = static_cast<std::uint8_t>(i % 2);
    for (std::size_t j = 0; j < d; ++j) values[i * d + j] = static_cast<float>(rng.normal());
    values[i * d] += labels[i] ? 1.0f : -1.0f;
  }
  tt::DatasetMeta meta;
  meta.dataset_name = "bench";
  meta.checkpoint_id = "ckpt_0";
  return tt::ActivationDataset(n, d, std::move(values), std::move(labels), meta);
}

void BM_Hsic(benchmark::State& state) {
  const auto n = static_cast<Eigen::Index>(state.range(0));
  const auto x = random_matrix(n, 32, 1);
  const auto y = random_matrix(n, 32, 2);
  for (auto _ : state) benchmark::DoNotOptimize(tt::hsic(x, y, 100.0, 100.0).value);
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Hsic)->RangeMultiplier(2)->Range(64, 512)->Complexity(benchmark::oNSquared);

void BM_SigmaSearch(benchmark::State& state) {
  const auto x = random_matrix(200, 32, 3);
  const auto y = random_matrix(200, 1, 4);
  const auto grid = tt::default_sigma_grid();
  for (auto _ : state) benchmark::DoNotOptimize(tt::sigma_search(x, y, grid).value);
}
BENCHMARK(BM_SigmaSearch);

void BM_Forward(benchmark::State& state) {
  tt::toylm::ToyLmConfig config;
  config.d_model = 64;
  config.n_layers = 4;
  config.n_heads = 4;
  config.d_ff = 256;
  config.max_seq_len = 128;
  const auto ckpt = tt::toylm::init(config);
  const tt::toylm::Sequence tokens(static_cast<std::size_t>(state.range(0)), 'a');
  for (auto _ : state) benchmark::DoNotOptimize(tt::toylm::forward(ckpt, tokens).logits);
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Forward)->Arg(16)->Arg(64)->Arg(128);

void BM_ProbeFit(benchmark::State& state) {
  const auto data = blobs(static_cast<std::size_t>(state.range(0)), 64, 5);
  for (auto _ : state) benchmark::DoNotOptimize(tt::fit_probe(data).bias);
}
BENCHMARK(BM_ProbeFit)->Arg(500)->Arg(2000);

void BM_ActvRoundTrip(benchmark::State& state) {
  const auto data = blobs(1000, 256, 6);
  for (auto _ : state) benchmark::DoNotOptimize(tt::decode_actv(tt::encode_actv(data)).rows());
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(data.values().size_bytes()));
}
BENCHMARK(BM_ActvRoundTrip);

}  // namespace

BENCHMARK_MAIN();
