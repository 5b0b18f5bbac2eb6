#include <gtest/gtest.h>

#include <functional>

#include "arnas/autodiff.hpp"
#include "arnas/model_stats.hpp"
#include "test_support.hpp"

namespace arnas {
namespace {

using Builder = std::function<Var(Tape&, const std::vector<Var>&)>;

// Scalar test objective: cross-entropy of a fixed random linear read-out of
// the op output, so every output element influences the loss.
double objective(const Builder& build, std::vector<Tensor>& inputs, std::vector<Tensor>* grads) {
  Tape t;
  std::vector<Var> leaves;
  for (const Tensor& x : inputs) leaves.push_back(t.leaf(x, grads != nullptr));
  const Var y = build(t, leaves);
  const Shape s = t.value(y).shape();
  const int in = static_cast<int>(s.numel() / s.n);
  const Var w = t.leaf(testing::random_tensor(Shape{3, in, 1, 1}, 99, -1.0, 1.0));
  const Var b = t.leaf(Tensor(Shape{3, 1, 1, 1}));
  const Var logits = ops::linear(t, y, w, b);
  const Var loss = ops::cross_entropy(t, logits, testing::cyclic_labels(s.n, 3));
  const double value = t.value(loss)[0];
  if (grads != nullptr) {
    t.backward(loss);
    grads->clear();
    for (Var v : leaves) grads->push_back(t.grad(v));
  }
  return value;
}

void expect_gradients_match(const Builder& build, std::vector<Tensor> inputs, double tol = 1e-6) {
  std::vector<Tensor> grads;
  objective(build, inputs, &grads);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double fd = testing::central_difference(
          [&] { return objective(build, inputs, nullptr); }, inputs[k][i], 1e-5);
      EXPECT_LE(testing::relative_error(grads[k][i], fd, 1e-3), tol)
          << "input " << k << " element " << i << ": analytic " << grads[k][i] << " vs " << fd;
    }
  }
}

TEST(Autodiff, Conv2dDense) {
  expect_gradients_match(
      [](Tape& t, const std::vector<Var>& v) { return ops::conv2d(t, v[0], v[1], Conv2dParams{1, 1, 1, 1}); },
      {testing::random_tensor({2, 2, 5, 5}, 1, -1, 1), testing::random_tensor({3, 2, 3, 3}, 2, -1, 1)});
}

TEST(Autodiff, Conv2dDepthwiseStridedDilated) {
  expect_gradients_match(
      [](Tape& t, const std::vector<Var>& v) { return ops::conv2d(t, v[0], v[1], Conv2dParams{2, 4, 2, 2}); },
      {testing::random_tensor({2, 2, 8, 8}, 3, -1, 1), testing::random_tensor({2, 1, 5, 5}, 4, -1, 1)});
}

TEST(Autodiff, Conv2dPointwiseStrided) {
  expect_gradients_match(
      [](Tape& t, const std::vector<Var>& v) { return ops::conv2d(t, v[0], v[1], Conv2dParams{2, 0, 1, 1}); },
      {testing::random_tensor({2, 3, 6, 6}, 5, -1, 1), testing::random_tensor({2, 3, 1, 1}, 6, -1, 1)});
}

TEST(Autodiff, BatchNormBatchStatisticsWithAffine) {
  Tensor mean(Shape{2, 1, 1, 1});
  Tensor var(Shape{2, 1, 1, 1}, 1.0);
  expect_gradients_match(
      [&](Tape& t, const std::vector<Var>& v) {
        return ops::batch_norm(t, v[0], NormMode::kBatch, BatchNormBuffers{&mean, &var}, v[1], v[2]);
      },
      {testing::random_tensor({3, 2, 3, 3}, 7, -1, 2), testing::random_tensor({2, 1, 1, 1}, 8, 0.5, 1.5),
       testing::random_tensor({2, 1, 1, 1}, 9, -1, 1)});
}

TEST(Autodiff, BatchNormRunningStatistics) {
  Tensor mean(Shape{2, 1, 1, 1}, 0.2);
  Tensor var(Shape{2, 1, 1, 1}, 2.0);
  expect_gradients_match(
      [&](Tape& t, const std::vector<Var>& v) {
        return ops::batch_norm(t, v[0], NormMode::kRunning, BatchNormBuffers{&mean, &var});
      },
      {testing::random_tensor({2, 2, 3, 3}, 10, -1, 1)});
}

TEST(Autodiff, BatchNormUpdatesRunningStatisticsOnlyWhenAsked) {
  Tensor mean(Shape{1, 1, 1, 1});
  Tensor var(Shape{1, 1, 1, 1}, 1.0);
  Tape t;
  const Tensor x(Shape{4, 1, 1, 1}, std::vector<double>{1, 2, 3, 4});
  ops::batch_norm(t, t.leaf(x), NormMode::kBatch, BatchNormBuffers{&mean, &var, false});
  EXPECT_EQ(mean[0], 0.0);
  ops::batch_norm(t, t.leaf(x), NormMode::kBatch, BatchNormBuffers{&mean, &var, true});
  EXPECT_NEAR(mean[0], 0.1 * 2.5, 1e-15);
  EXPECT_NEAR(var[0], 0.9 + 0.1 * (5.0 / 3.0), 1e-15);  // unbiased batch variance
}

TEST(Autodiff, Pooling) {
  expect_gradients_match(
      [](Tape& t, const std::vector<Var>& v) { return ops::max_pool(t, v[0], 3, 2, 1); },
      {testing::random_tensor({2, 2, 6, 6}, 11, -1, 1)});
  expect_gradients_match(
      [](Tape& t, const std::vector<Var>& v) { return ops::avg_pool(t, v[0], 3, 1, 1); },
      {testing::random_tensor({2, 2, 5, 5}, 12, -1, 1)});
  expect_gradients_match(
      [](Tape& t, const std::vector<Var>& v) { return ops::global_avg_pool(t, v[0]); },
      {testing::random_tensor({2, 3, 4, 4}, 13, -1, 1)});
}

TEST(Autodiff, AvgPoolExcludesPadding) {
  Tape t;
  const Var y = ops::avg_pool(t, t.leaf(Tensor(Shape{1, 1, 2, 2}, 1.0)), 3, 1, 1);
  for (double v : t.value(y).data()) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(Autodiff, StructuralOps) {
  expect_gradients_match(
      [](Tape& t, const std::vector<Var>& v) {
        const Var r = ops::relu(t, v[0]);
        const Var c = ops::crop_leading(t, v[1]);
        const std::array<Var, 2> parts{r, c};
        const Var cat = ops::concat_channels(t, parts);
        const std::array<Var, 2> terms{cat, ops::concat_channels(t, std::array<Var, 2>{c, r})};
        return ops::sum(t, terms);
      },
      {testing::random_tensor({2, 2, 4, 4}, 14, -1, 1), testing::random_tensor({2, 2, 5, 5}, 15, -1, 1)});
  const std::vector<double> shift{0.1, 0.2};
  const std::vector<double> scale{2.0, 0.5};
  expect_gradients_match(
      [&](Tape& t, const std::vector<Var>& v) { return ops::normalize_channels(t, v[0], shift, scale); },
      {testing::random_tensor({2, 2, 3, 3}, 16)});
}

TEST(Autodiff, MixedSumGradientsReachAlphaAndCandidates) {
  expect_gradients_match(
      [](Tape& t, const std::vector<Var>& v) {
        const Shape s = t.value(v[1]).shape();
        std::array<std::optional<Var>, 3> cands{std::nullopt, v[1], v[2]};
        return ops::mixed_sum(t, v[0], 1, cands, s);
      },
      {testing::random_tensor({2, 3, 1, 1}, 17, -1, 1), testing::random_tensor({2, 2, 3, 3}, 18, -1, 1),
       testing::random_tensor({2, 2, 3, 3}, 19, -1, 1)});
}

TEST(Autodiff, CrossEntropyRejectsBadLabels) {
  Tape t;
  const Var logits = t.leaf(Tensor(Shape{2, 3, 1, 1}));
  const std::vector<int> bad{0, 3};
  EXPECT_THROW(ops::cross_entropy(t, logits, bad), std::out_of_range);
}

TEST(OpCounter, SingleConvWorkedExample) {
  Tape t;
  const Var x = t.leaf(Tensor(Shape{1, 2, 8, 8}, 1.0));
  const Var w = t.leaf(Tensor(Shape{3, 2, 3, 3}, 1.0));
  ops::conv2d(t, x, w, Conv2dParams{1, 1, 1, 1});
  EXPECT_EQ(t.counter().macs, 3456u);
  const ModelStats s = conv_layer_stats(ConvLayerSpec{2, 3, 3, 8, 8, 1, true});
  EXPECT_EQ(s.macs, 3456u);
  EXPECT_EQ(s.flops(), 6912u);
  EXPECT_EQ(s.params, 57u);
}

}  // namespace
}  // namespace arnas
