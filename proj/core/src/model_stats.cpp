#include "arnas/model_stats.hpp"

#include <stdexcept>

namespace arnas {

ModelStats conv_layer_stats(const ConvLayerSpec& s) {
  if (s.groups < 1 || s.in_channels % s.groups != 0 || s.out_channels % s.groups != 0) {
    throw std::invalid_argument("conv_layer_stats: channels not divisible by groups");
  }
  ModelStats out;
  const std::uint64_t weights = static_cast<std::uint64_t>(s.out_channels) *
                                (s.in_channels / s.groups) * s.kernel * s.kernel;
  out.params = weights + (s.bias ? s.out_channels : 0);
  out.macs = weights * static_cast<std::uint64_t>(s.out_height) * s.out_width;
  return out;
}

namespace {

class StatsWalker {
 public:
  explicit StatsWalker(const Network& net) : net_(net) {}

  ModelStats run() {
    const LayoutPlan& layout = net_.layout();
    const InputShape& in = net_.macro().input_shape;
    int h = in.height;
    int w = in.width;
    conv(layout.stem_in_channels, layout.stem_out_channels, 3, 1, h, w);
    norm(layout.stem_out_channels, h, w);

    const int nodes = net_.topology().num_intermediate_nodes();
    int c_pp = layout.stem_out_channels;
    int c_p = c_pp;
    int h_pp = h;
    int h_p = h;
    int w_pp = w;
    int w_p = w;
    bool reduction_prev = false;
    for (const CellSlot& slot : layout.slots) {
      const int c = slot.channels;
      if (reduction_prev) {
        factorized_reduce(c_pp, c, h_pp / 2, w_pp / 2);
      } else {
        conv(c_pp, c, 1, 1, h_pp, w_pp);
        norm(c, h_pp, w_pp);
      }
      conv(c_p, c, 1, 1, h_p, w_p);
      norm(c, h_p, w_p);
      const bool reduction = slot.stride == 2;
      const int ho = reduction ? h_p / 2 : h_p;
      const int wo = reduction ? w_p / 2 : w_p;
      cell_edges(slot, c, ho, wo);
      c_pp = c_p;
      h_pp = h_p;
      w_pp = w_p;
      c_p = c * nodes;
      h_p = ho;
      w_p = wo;
      reduction_prev = reduction;
    }
    stats_.pool_ops += static_cast<std::uint64_t>(c_p) * h_p * w_p;
    const int k = layout.num_classes;
    stats_.macs += static_cast<std::uint64_t>(k) * c_p;
    stats_.params += static_cast<std::uint64_t>(k) * c_p + k;
    return stats_;
  }

 private:
  void conv(int cin, int cout, int k, int groups, int ho, int wo) {
    const ModelStats s = conv_layer_stats(ConvLayerSpec{cin, cout, k, ho, wo, groups, false});
    stats_.params += s.params;
    stats_.macs += s.macs;
  }

  void norm(int c, int h, int w) {
    stats_.norm_ops += 2ull * c * h * w;
    if (net_.affine_norm()) stats_.params += 2ull * c;
  }

  void factorized_reduce(int cin, int cout, int ho, int wo) {
    const int c1 = cout / 2;
    conv(cin, c1, 1, 1, ho, wo);
    conv(cin, cout - c1, 1, 1, ho, wo);
    norm(cout, ho, wo);
  }

  void op(OpKind kind, int c, int stride, int ho, int wo) {
    switch (kind) {
      case OpKind::kZero:
        return;
      case OpKind::kSkipConnect:
        if (stride == 2) factorized_reduce(c, c, ho, wo);
        return;
      case OpKind::kMaxPool3x3:
      case OpKind::kAvgPool3x3:
        stats_.pool_ops += 9ull * c * ho * wo;
        return;
      case OpKind::kSepConv3x3:
      case OpKind::kSepConv5x5: {
        const int k = kind == OpKind::kSepConv3x3 ? 3 : 5;
        for (int rep = 0; rep < 2; ++rep) {
          conv(c, c, k, c, ho, wo);
          conv(c, c, 1, 1, ho, wo);
          norm(c, ho, wo);
        }
        return;
      }
      case OpKind::kDilConv3x3:
      case OpKind::kDilConv5x5: {
        const int k = kind == OpKind::kDilConv3x3 ? 3 : 5;
        conv(c, c, k, c, ho, wo);
        conv(c, c, 1, 1, ho, wo);
        norm(c, ho, wo);
        return;
      }
    }
  }

  void cell_edges(const CellSlot& slot, int c, int ho, int wo) {
    const bool reduction = slot.stride == 2;
    if (net_.is_supernet()) {
      for (const Edge& e : net_.topology().edges()) {
        const int stride = reduction && e.from < 2 ? 2 : 1;
        for (OpKind k : kAllOps) op(k, c, stride, ho, wo);
      }
      return;
    }
    for (const SelectedEdge& se : net_.genotype().cell(slot.role)) {
      const int stride = reduction && se.from < 2 ? 2 : 1;
      op(se.op, c, stride, ho, wo);
    }
  }

  const Network& net_;
  ModelStats stats_;
};

}  // namespace

ModelStats analytic_stats(const Network& net) { return StatsWalker(net).run(); }

ModelStats instrumented_stats(const Network& net) {
  const InputShape& in = net.macro().input_shape;
  Tape tape;
  Var x = tape.leaf(Tensor(Shape{1, in.channels, in.height, in.width}), false);
  net.build(tape, x, GradRequest{}, ForwardOptions{NormMode::kRunning, false}, nullptr, nullptr);
  ModelStats out;
  out.params = net.weights().total_size();
  out.macs = tape.counter().macs;
  out.pool_ops = tape.counter().pool_ops;
  out.norm_ops = tape.counter().norm_ops;
  return out;
}

}  // namespace arnas
