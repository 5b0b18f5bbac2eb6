#include <benchmark/benchmark.h>

#include <random>
#include <span>
#include <vector>

#include "arnas/autodiff.hpp"

namespace {

arnas::Tensor random_tensor(arnas::Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  arnas::Tensor t(s);
  for (double& v : t.data()) v = g(rng);
  return t;
}

// Scalar read-out so backward() has a loss to start from.
arnas::Var readout_loss(arnas::Tape& t, arnas::Var y, int channels, int batch) {
  static const std::vector<int> labels = [] {
    std::vector<int> l(64);
    for (int i = 0; i < 64; ++i) l[i] = i % 3;
    return l;
  }();
  const arnas::Var pooled = arnas::ops::global_avg_pool(t, y);
  const arnas::Var w = t.leaf(random_tensor({3, channels, 1, 1}, 7));
  const arnas::Var b = t.leaf(arnas::Tensor(arnas::Shape{3, 1, 1, 1}));
  const arnas::Var logits = arnas::ops::linear(t, pooled, w, b);
  return arnas::ops::cross_entropy(t, logits, std::span<const int>(labels).first(batch));
}

// args: channels, spatial size, kernel, groups (0 = depthwise)
void BM_Conv2dForwardBackward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const int hw = static_cast<int>(state.range(1));
  const int k = static_cast<int>(state.range(2));
  const int groups = state.range(3) == 0 ? c : static_cast<int>(state.range(3));
  const arnas::Tensor x = random_tensor({8, c, hw, hw}, 1);
  const arnas::Tensor w = random_tensor({c, c / groups, k, k}, 2);
  std::uint64_t macs = 0;
  for (auto _ : state) {
    arnas::Tape t;
    const arnas::Var xv = t.leaf(x, true);
    const arnas::Var wv = t.leaf(w, true);
    const arnas::Var y = arnas::ops::conv2d(t, xv, wv, arnas::Conv2dParams{1, k / 2, 1, groups});
    t.backward(readout_loss(t, y, c, 8));
    benchmark::DoNotOptimize(t.grad(wv).raw());
    macs = t.counter().macs;
  }
  state.counters["fwd_MACs/s"] =
      benchmark::Counter(static_cast<double>(macs), benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_Conv2dForwardBackward)
    ->Args({16, 16, 1, 1})
    ->Args({16, 16, 3, 0})
    ->Args({16, 16, 5, 0})
    ->Args({32, 8, 1, 1})
    ->Unit(benchmark::kMicrosecond);

void BM_BatchNorm(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const arnas::Tensor x = random_tensor({8, c, 16, 16}, 3);
  arnas::Tensor mean(arnas::Shape{c, 1, 1, 1});
  arnas::Tensor var(arnas::Shape{c, 1, 1, 1}, 1.0);
  for (auto _ : state) {
    arnas::Tape t;
    const arnas::Var xv = t.leaf(x, true);
    const arnas::Var y = arnas::ops::batch_norm(t, xv, arnas::NormMode::kBatch,
                                                arnas::BatchNormBuffers{&mean, &var}, {}, {});
    t.backward(readout_loss(t, y, c, 8));
    benchmark::DoNotOptimize(t.grad(xv).raw());
  }
}
BENCHMARK(BM_BatchNorm)->Arg(4)->Arg(16)->Unit(benchmark::kMicrosecond);

}  // namespace
