#include <benchmark/benchmark.h>

#include "fedrelu/federated.hpp"
#include "fedrelu/linalg.hpp"
#include "fedrelu/network.hpp"
#include "fedrelu/probes.hpp"

using namespace fedrelu;

static void BM_Matmul(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto n = static_cast<std::size_t>(state.range(1));
  RngStream rng(1, 1);
  const Matrix a = gaussian_matrix(m, m, 1.0, rng);
  const Matrix b = gaussian_matrix(m, n, 1.0, rng);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(2 * m * m * n));
}
BENCHMARK(BM_Matmul)->Args({256, 16})->Args({1024, 7})->Args({1024, 16});

static void BM_MatmulTN(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto n = static_cast<std::size_t>(state.range(1));
  RngStream rng(1, 2);
  const Matrix a = gaussian_matrix(m, m, 1.0, rng);
  const Matrix b = gaussian_matrix(m, n, 1.0, rng);
  for (auto _ : state) benchmark::DoNotOptimize(matmul_tn(a, b));
}
BENCHMARK(BM_MatmulTN)->Args({1024, 7})->Args({1024, 16});

static void BM_SpectralNorm(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto iters = static_cast<std::size_t>(state.range(1));
  RngStream rng(1, 3);
  const Matrix a = gaussian_matrix(m, m, 1.0, rng);
  for (auto _ : state) benchmark::DoNotOptimize(spectral_norm(a, iters, 0.0));
}
BENCHMARK(BM_SpectralNorm)->Args({256, 20})->Args({1024, 20});

static void BM_LossAndGradient(benchmark::State& state) {
  network::NetConfig net;
  net.L = 2;
  net.m = static_cast<std::size_t>(state.range(0));
  net.d = 32;
  net.o = 1;
  RngStream data_rng(7, streams::kData), teacher(7, streams::kTeacher);
  const data::Dataset ds = data::gen_separable({16, net.d, net.o, 0.3, 1.0}, data_rng, teacher);
  RngStream part_rng(7, streams::kPartition);
  const data::Partition part = data::partition_iid(ds, 1, part_rng);
  RngStream init(7, streams::kInit);
  const network::Params p = network::init_params(net, init);
  for (auto _ : state) benchmark::DoNotOptimize(network::loss_and_gradient(p, part.shards[0]));
}
BENCHMARK(BM_LossAndGradient)->Arg(256)->Arg(1024)->Unit(benchmark::kMillisecond);

static void BM_LocalGDRound(benchmark::State& state) {
  network::NetConfig net;
  net.L = 2;
  net.m = 512;
  net.d = 16;
  net.o = 4;
  RngStream data_rng(11, streams::kData), teacher(11, streams::kTeacher);
  const data::Dataset ds = data::gen_separable({64, net.d, net.o, 0.3, 1.0}, data_rng, teacher);
  RngStream part_rng(1, streams::kPartition);
  const data::Partition part = data::partition_label_shards(ds, 8, 1, part_rng);
  federated::FedConfig cfg;
  cfg.K = 8;
  cfg.tau = 8;
  cfg.eta = 0.01;
  RngStream init(1, streams::kInit);
  federated::FedState st = federated::make_state(network::init_params(net, init), cfg);
  for (auto _ : state) {
    for (std::size_t s = 0; s < cfg.tau; ++s) federated::advance(st, cfg, part);
    federated::synchronize(st, cfg);
  }
}
BENCHMARK(BM_LocalGDRound)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
