#include <gtest/gtest.h>

#include <random>

#include "arnas/checkpoint.hpp"
#include "arnas/network.hpp"
#include "test_support.hpp"

namespace arnas {
namespace {

using testing::cyclic_labels;
using testing::random_tensor;
using testing::relative_error;

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

TEST(Network, SupernetShapesAndLayout) {
  const Network net = init_supernet(testing::small_macro(8, 4, 16, 3), CellTopology(4), 0);
  EXPECT_TRUE(net.is_supernet());
  EXPECT_EQ(net.alpha().num_edges(), 14);
  EXPECT_EQ(net.alpha().flat_size(), 3u * 14 * 8);
  const Tensor y = net.forward(random_tensor({2, 3, 16, 16}, 1));
  EXPECT_EQ(y.shape(), (Shape{2, 3, 1, 1}));
  EXPECT_THROW(net.validate_input(Shape{1, 3, 8, 8}), std::invalid_argument);
}

TEST(Network, InitIsDeterministic) {
  const MacroConfig m = testing::small_macro(3, 4, 8, 3);
  const Network a = init_supernet(m, CellTopology(4), 5);
  const Network b = init_supernet(m, CellTopology(4), 5);
  const Network c = init_supernet(m, CellTopology(4), 6);
  EXPECT_EQ(a.weights(), b.weights());
  EXPECT_EQ(a.alpha(), b.alpha());
  EXPECT_NE(a.weights(), c.weights());
  for (double v : a.alpha().flatten()) EXPECT_LT(std::abs(v), 1e-2);
}

TEST(Network, SupernetGradientsMatchFiniteDifferences) {
  const MacroConfig m = testing::small_macro(3, 4, 8, 3);
  Network net = init_supernet(m, CellTopology(4), 2);
  {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g(0.0, 0.5);
    for (CellRole r : kAllRoles)
      for (double& v : net.alpha().block(r)) v = g(rng);
  }
  const Tensor x = random_tensor({2, 3, 8, 8}, 4);
  const auto y = cyclic_labels(2, 3);
  const ForwardOptions opts{NormMode::kRunning, false};
  GradRequest req;
  req.weights = req.alpha = req.input = true;
  const GradResult g = net.gradients(x, y, req, opts);
  const double h = 1e-5;

  // a sample of alpha entries from every block
  for (CellRole r : kAllRoles) {
    for (int e : {0, 5, 13}) {
      for (int op = 0; op < kNumOps; op += 3) {
        double& a = net.alpha().at(r, e, op);
        const double num = testing::central_difference(
            [&] { return cross_entropy_loss(net.forward(x, opts), y); }, a, h);
        EXPECT_LT(relative_error(g.alpha.at(r, e, op), num), 1e-3)
            << role_name(r) << " edge " << e << " op " << op;
      }
    }
  }
  int checked = 0;
  for (auto& [name, t] : net.weights().entries()) {
    if (checked++ % 7 != 0) continue;
    const std::size_t i = t.size() / 2;
    const double num = testing::central_difference(
        [&] { return cross_entropy_loss(net.forward(x, opts), y); }, t[i], h);
    EXPECT_LT(relative_error(g.weights.at(name)[i], num), 1e-3) << name;
  }
  Tensor xv = x;
  for (std::size_t i : {std::size_t{0}, std::size_t{77}, std::size_t{200}}) {
    const double num = testing::central_difference(
        [&] { return cross_entropy_loss(net.forward(xv, opts), y); }, xv[i], h);
    EXPECT_LT(relative_error(g.input[i], num), 1e-3);
  }
}

TEST(Network, LossScaleScalesEverything) {
  const Network net = init_supernet(testing::small_macro(3, 2, 8, 3), CellTopology(4), 1);
  const Tensor x = random_tensor({2, 3, 8, 8}, 4);
  const auto y = cyclic_labels(2, 3);
  GradRequest req;
  req.alpha = true;
  const GradResult a = net.gradients(x, y, req);
  req.loss_scale = 0.25;
  const GradResult b = net.gradients(x, y, req);
  EXPECT_NEAR(b.loss, 0.25 * a.loss, 1e-15);
  const auto fa = a.alpha.flatten();
  const auto fb = b.alpha.flatten();
  for (std::size_t i = 0; i < fa.size(); ++i) EXPECT_NEAR(fb[i], 0.25 * fa[i], 1e-15);
}

TEST(Network, BatchModeUpdatesRunningStatsOnlyInTrainPath) {
  Network net = init_supernet(testing::small_macro(3, 2, 8, 3), CellTopology(4), 1);
  const ParamStore before = net.buffers();
  const Tensor x = random_tensor({4, 3, 8, 8}, 9);
  (void)net.forward(x, ForwardOptions{NormMode::kBatch, true});
  EXPECT_EQ(net.buffers(), before);
  (void)net.forward_train(x, ForwardOptions{NormMode::kBatch, true});
  EXPECT_NE(net.buffers(), before);
}

TEST(Network, CheckpointRoundTripIsBitExact) {
  Network net = init_supernet(testing::small_macro(3, 2, 8, 3), CellTopology(4), 11);
  net.set_input_normalization(InputNormalization{{0.1, 0.2, 0.3}, {0.5, 0.6, 0.7}});
  (void)net.forward_train(random_tensor({4, 3, 8, 8}, 1), ForwardOptions{NormMode::kBatch, true});
  net.alpha().at(CellRole::kRobust, 3, 4) = 1.0 / 3.0;
  const auto dir = testing::scratch_dir("ckpt");
  const std::string path = (dir / "net.json").string();
  save_checkpoint(path, net);
  const Network back = load_checkpoint(path);
  EXPECT_EQ(back.weights(), net.weights());
  EXPECT_EQ(back.buffers(), net.buffers());
  EXPECT_EQ(back.alpha(), net.alpha());
  EXPECT_EQ(back.input_normalization(), net.input_normalization());
  const Tensor x = random_tensor({2, 3, 8, 8}, 2);
  EXPECT_EQ(back.forward(x, {NormMode::kRunning, false}), net.forward(x, {NormMode::kRunning, false}));

  const Network d = instantiate_discrete(testing::uniform_genotype(OpKind::kSepConv3x3),
                                         testing::small_macro(3, 2, 8, 3), 4);
  const Network d2 = checkpoint_from_string(checkpoint_to_string(d));
  EXPECT_EQ(d2.kind(), NetworkKind::kDiscrete);
  EXPECT_EQ(d2.genotype(), d.genotype());
  EXPECT_EQ(d2.weights(), d.weights());
}

TEST(Network, CorruptCheckpointsAreRejected) {
  const Network net = init_supernet(testing::small_macro(3, 2, 8, 3), CellTopology(4), 1);
  std::string text = checkpoint_to_string(net);
  EXPECT_ANY_THROW(checkpoint_from_string(text.substr(0, text.size() / 2)));
  EXPECT_ANY_THROW(checkpoint_from_string("{\"format\": \"other\"}"));
  EXPECT_ANY_THROW(load_checkpoint("/nonexistent/dir/net.json"));
}

TEST(Network, ShareWeightsCopiesMatchingArrays) {
  const MacroConfig m = testing::small_macro(3, 2, 8, 3);
  const Network super = init_supernet(m, CellTopology(4), 1);
  Network d = instantiate_discrete(testing::uniform_genotype(OpKind::kDilConv3x3), m, 2);
  const int copied = share_weights(super, d);
  EXPECT_GT(copied, 0);
  int same = 0;
  for (const auto& [name, t] : d.weights().entries()) {
    if (super.weights().contains(name) && super.weights().at(name).shape() == t.shape()) {
      EXPECT_EQ(t, super.weights().at(name)) << name;
      ++same;
    }
  }
  EXPECT_EQ(same, copied);
}

TEST(Network, SaturatedSupernetMatchesDiscreteNetwork) {
  const MacroConfig m = testing::small_macro(3, 2, 8, 3);
  const CellTopology topo(4);
  const Genotype g = [] {
    Genotype out;
    const OpKind ops[] = {OpKind::kSepConv3x3, OpKind::kSkipConnect, OpKind::kMaxPool3x3,
                          OpKind::kDilConv5x5};
    for (CellRole r : kAllRoles)
      for (int node = 2; node < 6; ++node) {
        out.cell(r).push_back(SelectedEdge{0, node, ops[(node + static_cast<int>(r)) % 4]});
        out.cell(r).push_back(SelectedEdge{node - 1, node, ops[(node + 1) % 4]});
      }
    return out;
  }();
  Network super = init_supernet(m, topo, 3);
  for (CellRole r : kAllRoles) {
    for (int e = 0; e < topo.num_edges(); ++e)
      for (int op = 0; op < kNumOps; ++op) super.alpha().at(r, e, op) = 0.0;
    for (int e = 0; e < topo.num_edges(); ++e) super.alpha().at(r, e, 0) = 60.0;
    for (const SelectedEdge& s : g.cell(r)) {
      const int e = topo.edge_index(s.from, s.to);
      super.alpha().at(r, e, 0) = 0.0;
      super.alpha().at(r, e, static_cast<int>(s.op)) = 60.0;
    }
  }
  Network d = instantiate_discrete(g, m, 99);
  share_weights(super, d);
  const Tensor x = random_tensor({3, 3, 8, 8}, 5);
  for (NormMode mode : {NormMode::kBatch, NormMode::kRunning}) {
    const Tensor a = super.forward(x, {mode, false});
    const Tensor b = d.forward(x, {mode, false});
    EXPECT_LT(max_abs_diff(a, b), 1e-9);
  }
}

}  // namespace
}  // namespace arnas
