#include <benchmark/benchmark.h>

#include <random>

#include "arnas/attacks.hpp"
#include "arnas/network.hpp"

namespace {

arnas::MacroConfig desk_macro(int cells, int channels, int size) {
  arnas::MacroConfig m;
  m.num_cells = cells;
  m.init_channels = channels;
  m.num_classes = 3;
  m.input_shape = arnas::InputShape{3, size, size};
  return m;
}

arnas::Tensor random_images(int n, int size) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  arnas::Tensor t(arnas::Shape{n, 3, size, size});
  for (double& v : t.data()) v = u(rng);
  return t;
}

std::vector<int> labels(int n) {
  std::vector<int> y(n);
  for (int i = 0; i < n; ++i) y[i] = i % 3;
  return y;
}

void BM_SupernetForward(benchmark::State& state) {
  const int batch = static_cast<int>(state.range(0));
  const arnas::Network net = arnas::init_supernet(desk_macro(8, 4, 16), arnas::CellTopology(4), 0);
  const arnas::Tensor x = random_images(batch, 16);
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(x).raw());
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_SupernetForward)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_SupernetGradients(benchmark::State& state) {
  const int batch = static_cast<int>(state.range(0));
  const arnas::Network net = arnas::init_supernet(desk_macro(8, 4, 16), arnas::CellTopology(4), 0);
  const arnas::Tensor x = random_images(batch, 16);
  const auto y = labels(batch);
  arnas::GradRequest req;
  req.weights = req.alpha = true;
  for (auto _ : state) benchmark::DoNotOptimize(net.gradients(x, y, req).loss);
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_SupernetGradients)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_DiscretePgd(benchmark::State& state) {
  arnas::Genotype g;
  for (arnas::CellRole r : arnas::kAllRoles)
    for (int node = 2; node < 6; ++node) {
      g.cell(r).push_back({node - 2, node, arnas::OpKind::kSepConv3x3});
      g.cell(r).push_back({node - 1, node, arnas::OpKind::kDilConv3x3});
    }
  const arnas::Network net = arnas::instantiate_discrete(g, desk_macro(8, 4, 16), 0);
  const arnas::NetworkClassifier model(net, arnas::NormMode::kRunning);
  const arnas::Tensor x = random_images(16, 16);
  const auto y = labels(16);
  const arnas::AttackConfig cfg = arnas::AttackConfig::pgd(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(arnas::pgd(model, x, y, cfg, 1).raw());
}
BENCHMARK(BM_DiscretePgd)->Arg(7)->Arg(20)->Unit(benchmark::kMillisecond);

}  // namespace
