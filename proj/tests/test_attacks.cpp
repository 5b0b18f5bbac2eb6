#include <gtest/gtest.h>

#include <random>

#include "arnas/attacks.hpp"
#include "test_support.hpp"

namespace arnas {
namespace {

constexpr double kEps = 8.0 / 255.0;

TEST(Attacks, PgdStaysInsideTheBallAndPixelRange) {
  const testing::LinearSoftmax model(3 * 4 * 4, 3, 5);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> eps(0.0, 0.1);
  std::uniform_int_distribution<int> steps(0, 6);
  for (int trial = 0; trial < 300; ++trial) {
    // pixels at the range ends exercise the clamp
    Tensor x = testing::random_tensor({2, 3, 4, 4}, 100 + trial, -0.05, 1.05);
    for (double& v : x.data()) v = std::clamp(v, 0.0, 1.0);
    const double e = eps(rng);
    const AttackConfig cfg = AttackConfig::pgd(steps(rng), e, e / 3.0, trial % 2 == 0);
    const Tensor adv = pgd(model, x, testing::cyclic_labels(2, 3), cfg, trial);
    for (std::size_t i = 0; i < x.size(); ++i) {
      EXPECT_LE(std::abs(adv[i] - x[i]), e + 1e-9);
      EXPECT_GE(adv[i], 0.0);
      EXPECT_LE(adv[i], 1.0);
    }
  }
}

TEST(Attacks, SingleStepPgdIsFgsmBitwise) {
  const testing::LinearSoftmax model(3 * 4 * 4, 3, 6);
  const Tensor x = testing::random_tensor({4, 3, 4, 4}, 7);
  const auto y = testing::cyclic_labels(4, 3);
  const Tensor a = pgd(model, x, y, AttackConfig::pgd(1, kEps, kEps, false));
  const Tensor b = fgsm(model, x, y, kEps);
  EXPECT_EQ(a, b);
  EXPECT_EQ(attack(model, x, y, AttackConfig::fgsm(kEps)), b);
}

TEST(Attacks, FgsmOnLinearModelMatchesClosedForm) {
  const int in = 3 * 4 * 4;
  const testing::LinearSoftmax model(in, 3, 8);
  const Tensor x = testing::random_tensor({3, 3, 4, 4}, 9);
  const auto y = testing::cyclic_labels(3, 3);
  const Tensor adv = fgsm(model, x, y, kEps);
  // d loss / dx = W^T (softmax(Wx + b) - onehot(y)), up to the positive 1/N factor
  for (int n = 0; n < 3; ++n) {
    const Tensor z = model.logits(x.slice_batch(n, n + 1));
    std::vector<double> p(3);
    double m = std::max({z[0], z[1], z[2]});
    double s = 0.0;
    for (int j = 0; j < 3; ++j) s += (p[j] = std::exp(z[j] - m));
    for (double& v : p) v /= s;
    p[y[n]] -= 1.0;
    for (int i = 0; i < in; ++i) {
      Tensor unit(Shape{1, 3, 4, 4});
      unit[i] = 1.0;
      const Tensor zu = model.logits(unit);
      const Tensor z0 = model.logits(Tensor(Shape{1, 3, 4, 4}));
      double g = 0.0;
      for (int j = 0; j < 3; ++j) g += (zu[j] - z0[j]) * p[j];
      const double sign = g > 0 ? 1.0 : (g < 0 ? -1.0 : 0.0);
      const std::size_t idx = static_cast<std::size_t>(n) * in + i;
      EXPECT_EQ(adv[idx], std::clamp(x[idx] + kEps * sign, 0.0, 1.0));
    }
  }
}

TEST(Attacks, ZeroBudgetIsTheIdentity) {
  const testing::LinearSoftmax model(3 * 4 * 4, 3, 10);
  const Tensor x = testing::random_tensor({2, 3, 4, 4}, 11);
  const auto y = testing::cyclic_labels(2, 3);
  EXPECT_EQ(pgd(model, x, y, AttackConfig::pgd(7, 0.0, 0.01, true), 3), x);
  EXPECT_EQ(fgsm(model, x, y, 0.0), x);
}

TEST(Attacks, RandomStartIsSeeded) {
  const testing::LinearSoftmax model(3 * 4 * 4, 3, 12);
  const Tensor x = testing::random_tensor({2, 3, 4, 4}, 13);
  const auto y = testing::cyclic_labels(2, 3);
  const AttackConfig cfg = AttackConfig::pgd(0, kEps, kEps / 4, true);
  EXPECT_EQ(pgd(model, x, y, cfg, 1), pgd(model, x, y, cfg, 1));
  EXPECT_NE(pgd(model, x, y, cfg, 1), pgd(model, x, y, cfg, 2));
}

TEST(Attacks, PgdIncreasesLossOnNetwork) {
  const MacroConfig m = testing::small_macro(3, 2, 8, 3);
  const Network net = init_supernet(m, CellTopology(4), 1);
  const NetworkClassifier model(net, NormMode::kRunning);
  const Tensor x = testing::random_tensor({4, 3, 8, 8}, 14);
  const auto y = testing::cyclic_labels(4, 3);
  Tensor g;
  const double before = model.loss_input_gradient(x, y, g);
  const Tensor adv = pgd(model, x, y, AttackConfig::pgd(5, kEps, 2.0 / 255.0, false));
  const double after = model.loss_input_gradient(adv, y, g);
  EXPECT_GT(after, before);
}

TEST(Attacks, ConfigValidation) {
  AttackConfig c;
  c.epsilon = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = AttackConfig{};
  c.steps = -2;
  EXPECT_THROW(c.validate(), ConfigError);
  c = AttackConfig{};
  c.clip_min = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

}  // namespace
}  // namespace arnas
