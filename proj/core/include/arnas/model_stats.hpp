#pragma once

#include <cstdint>

#include "arnas/network.hpp"

namespace arnas {

/// Work of one forward pass at batch size 1. Conv and linear layers count
/// one MAC per kernel tap per output element (zero-padded taps included),
/// pooling counts window-size ops per output element (global average
/// pooling: H*W per output), normalization counts 2 ops per element.
struct ModelStats {
  std::uint64_t params = 0;
  std::uint64_t macs = 0;
  std::uint64_t pool_ops = 0;
  std::uint64_t norm_ops = 0;

  std::uint64_t flops() const { return 2 * macs + pool_ops + norm_ops; }
  bool operator==(const ModelStats&) const = default;
};

/// Counts from the layout and genotype alone, without running the network.
ModelStats analytic_stats(const Network& net);

/// Counts gathered by the kernels during a batch-1 forward pass; params are
/// the sum of the stored parameter array sizes.
ModelStats instrumented_stats(const Network& net);

/// Single convolution layer with optional bias.
struct ConvLayerSpec {
  int in_channels = 1;
  int out_channels = 1;
  int kernel = 3;
  int out_height = 1;
  int out_width = 1;
  int groups = 1;
  bool bias = false;
};

ModelStats conv_layer_stats(const ConvLayerSpec& spec);

}  // namespace arnas
