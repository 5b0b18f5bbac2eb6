#include <benchmark/benchmark.h>

#include <random>

#include "arnas/mgda.hpp"

namespace {

void BM_GammaStarCombine(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> a(n), b(n);
  for (std::size_t i = 0; i < n; ++i) a[i] = g(rng), b[i] = g(rng);
  for (auto _ : state) {
    const double gamma = arnas::mgda::gamma_star(a, b);
    benchmark::DoNotOptimize(arnas::mgda::combine(a, b, gamma).data());
  }
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * sizeof(double)));
}
// 336 = 3 roles x 14 edges x 8 ops
BENCHMARK(BM_GammaStarCombine)->Arg(336)->Arg(1 << 16);

}  // namespace
