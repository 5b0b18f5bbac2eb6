#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "arnas/tensor.hpp"

namespace arnas {

/// Work counters filled in by the kernels as they run. Conv and linear
/// kernels count one multiply-accumulate per visited (kernel tap, output)
/// pair, zero-padded taps included; pooling counts one op per visited
/// window slot; normalization counts two ops per element.
struct OpCounter {
  std::uint64_t macs = 0;
  std::uint64_t pool_ops = 0;
  std::uint64_t norm_ops = 0;
};

/// Handle to a value recorded on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode autodiff tape. Values are recorded in evaluation order and
/// gradients are propagated in reverse by backward(). A tape is used for a
/// single forward/backward pass and then discarded.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

  Var leaf(Tensor value, bool requires_grad = false);
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn fn);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  /// Gradient accumulated into `v` by backward(); zeros if nothing reached it.
  Tensor grad(Var v) const;
  /// Accumulation buffer for op implementations (allocated on first use).
  Tensor& grad_buffer(Var v);

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded backward function.
  void backward(Var loss);

  OpCounter& counter() { return counter_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::deque<Node> nodes_;
  OpCounter counter_;
};

struct Conv2dParams {
  int stride = 1;
  int padding = 0;
  int dilation = 1;
  int groups = 1;
};

/// Output spatial extent of a strided, dilated, padded window sweep.
int conv_output_size(int in, int kernel, int stride, int padding, int dilation);

enum class NormMode {
  kBatch,    // normalize with the batch statistics
  kRunning,  // normalize with the stored running statistics
};

struct BatchNormBuffers {
  Tensor* running_mean = nullptr;
  Tensor* running_var = nullptr;
  bool update_running = false;
  double momentum = 0.1;
  double eps = 1e-5;
};

namespace ops {

/// weight: (C_out, C_in / groups, K, K); no bias.
Var conv2d(Tape& t, Var x, Var weight, const Conv2dParams& p);
Var add_channel_bias(Tape& t, Var x, Var bias);
Var relu(Tape& t, Var x);
/// gamma/beta are optional affine parameters of shape (C,1,1,1).
Var batch_norm(Tape& t, Var x, NormMode mode, BatchNormBuffers buffers,
               std::optional<Var> gamma = std::nullopt,
               std::optional<Var> beta = std::nullopt);
Var max_pool(Tape& t, Var x, int kernel, int stride, int padding);
/// Averages over the in-bounds part of each window only.
Var avg_pool(Tape& t, Var x, int kernel, int stride, int padding);
Var global_avg_pool(Tape& t, Var x);
/// x flattened to (N, C*H*W); weight (out, in, 1, 1); bias (out, 1, 1, 1).
Var linear(Tape& t, Var x, Var weight, Var bias);
Var sum(Tape& t, std::span<const Var> xs);
Var concat_channels(Tape& t, std::span<const Var> xs);
/// Drops the first row and first column: x[:, :, 1:, 1:].
Var crop_leading(Tape& t, Var x);
Var zeros(Tape& t, Shape shape);
/// (x - shift[c]) / scale[c], constants per channel.
Var normalize_channels(Tape& t, Var x, std::span<const double> shift,
                       std::span<const double> scale);

/// Softmax-weighted sum of candidate outputs using row `row` of the logits
/// matrix `alpha` (rows, K, 1, 1). Missing candidates are the zero op.
Var mixed_sum(Tape& t, Var alpha, int row,
              std::span<const std::optional<Var>> candidates, Shape out_shape);

/// scale * mean cross-entropy; returns a (1,1,1,1) tensor.
Var cross_entropy(Tape& t, Var logits, std::span<const int> labels,
                  double scale = 1.0);

}  // namespace ops

/// Row-wise softmax of a logits row.
std::vector<double> softmax(std::span<const double> logits);

}  // namespace arnas
