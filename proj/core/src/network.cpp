#include "arnas/network.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace arnas {

Tensor& ParamStore::add(const std::string& name, Tensor value) {
  auto [it, inserted] = params_.emplace(name, std::move(value));
  if (!inserted) throw std::invalid_argument("duplicate parameter " + name);
  return it->second;
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("no parameter named " + name);
  return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("no parameter named " + name);
  return it->second;
}

std::size_t ParamStore::total_size() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += t.size();
  return n;
}

std::vector<double> ParamStore::flatten() const {
  std::vector<double> out;
  out.reserve(total_size());
  for (const auto& [_, t] : params_) out.insert(out.end(), t.values().begin(), t.values().end());
  return out;
}

void ParamStore::assign_flat(std::span<const double> flat) {
  if (flat.size() != total_size()) {
    throw std::invalid_argument("flat parameter vector has length " + std::to_string(flat.size()) +
                                ", expected " + std::to_string(total_size()));
  }
  std::size_t off = 0;
  for (auto& [_, t] : params_) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), t.size(), t.raw());
    off += t.size();
  }
}

ParamStore ParamStore::zeros_like() const {
  ParamStore z;
  for (const auto& [name, t] : params_) z.add(name, Tensor(t.shape()));
  return z;
}

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::mt19937_64 named_rng(std::uint64_t seed, const std::string& name) {
  const std::uint64_t h = fnv1a(name);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  return std::mt19937_64(seq);
}

enum class Init { kFanIn, kOnes, kZeros };

}  // namespace

/// Walks the network structure once, either declaring missing parameters
/// (initialization) or recording the forward graph on a tape.
class NetworkBuilder {
 public:
  NetworkBuilder(const Network& net, Tape& tape, ParamStore* weights, ParamStore* buffers,
                 bool create_missing, const GradRequest& req, ForwardOptions opts,
                 std::map<std::string, Var>* bound_weights,
                 std::array<Var, kNumRoles>* bound_alpha)
      : net_(net),
        tape_(tape),
        weights_(weights),
        buffers_(buffers),
        create_(create_missing),
        req_(req),
        opts_(opts),
        bound_(bound_weights),
        alpha_bound_(bound_alpha) {}

  Var run(Var input) {
    const auto& norm = net_.input_normalization();
    Var x = input;
    if (!norm.mean.empty()) x = ops::normalize_channels(tape_, x, norm.mean, norm.stddev);

    const LayoutPlan& layout = net_.layout();
    const int in_c = layout.stem_in_channels;
    const int stem_c = layout.stem_out_channels;
    Var s = ops::conv2d(tape_, x, param("stem.conv", Shape{stem_c, in_c, 3, 3}, in_c * 9),
                        Conv2dParams{1, 1, 1, 1});
    s = norm_layer("stem.bn", s, stem_c);

    if (net_.is_supernet()) {
      for (CellRole r : kAllRoles) {
        alpha_vars_[static_cast<int>(r)] = Var{};
      }
    }

    Var s0 = s;
    Var s1 = s;
    int c_pp = stem_c;
    int c_p = stem_c;
    bool reduction_prev = false;
    const int nodes = net_.topology().num_intermediate_nodes();
    for (int i = 0; i < static_cast<int>(layout.slots.size()); ++i) {
      const CellSlot& slot = layout.slots[i];
      Var out = cell(i, slot, s0, s1, c_pp, c_p, reduction_prev);
      s0 = s1;
      s1 = out;
      c_pp = c_p;
      c_p = slot.channels * nodes;
      reduction_prev = slot.stride == 2;
    }
    Var pooled = ops::global_avg_pool(tape_, s1);
    const int k = layout.num_classes;
    Var logits = ops::linear(tape_, pooled, param("classifier.weight", Shape{k, c_p, 1, 1}, c_p),
                             param("classifier.bias", Shape{k, 1, 1, 1}, 0, Init::kZeros));
    if (alpha_bound_ != nullptr) *alpha_bound_ = alpha_vars_;
    return logits;
  }

 private:
  Var param(const std::string& name, Shape shape, int fan_in, Init init = Init::kFanIn) {
    if (bound_ != nullptr) {
      auto it = bound_->find(name);
      if (it != bound_->end()) return it->second;
    }
    if (!weights_->contains(name)) {
      if (!create_) throw std::logic_error("network has no parameter " + name);
      Tensor t(shape);
      if (init == Init::kOnes) {
        t.fill(1.0);
      } else if (init == Init::kFanIn) {
        auto rng = named_rng(net_.seed(), name);
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / std::max(1, fan_in)));
        for (double& v : t.data()) v = dist(rng);
      }
      weights_->add(name, std::move(t));
    }
    const Tensor& value = weights_->at(name);
    if (!(value.shape() == shape)) {
      throw std::logic_error("parameter " + name + " has shape " + value.shape().str() +
                             ", expected " + shape.str());
    }
    Var v = tape_.leaf(value, req_.weights);
    if (bound_ != nullptr) bound_->emplace(name, v);
    return v;
  }

  Tensor* buffer(const std::string& name, int c, double fill) {
    if (!buffers_->contains(name)) {
      if (!create_) throw std::logic_error("network has no buffer " + name);
      buffers_->add(name, Tensor(Shape{c, 1, 1, 1}, fill));
    }
    return &buffers_->at(name);
  }

  Var norm_layer(const std::string& prefix, Var x, int c) {
    BatchNormBuffers b;
    b.running_mean = buffer(prefix + ".running_mean", c, 0.0);
    b.running_var = buffer(prefix + ".running_var", c, 1.0);
    b.update_running = opts_.update_running_stats;
    std::optional<Var> gamma;
    std::optional<Var> beta;
    if (net_.affine_norm()) {
      gamma = param(prefix + ".weight", Shape{c, 1, 1, 1}, 0, Init::kOnes);
      beta = param(prefix + ".bias", Shape{c, 1, 1, 1}, 0, Init::kZeros);
    }
    return ops::batch_norm(tape_, x, opts_.norm, b, gamma, beta);
  }

  Var relu_conv_bn(const std::string& prefix, Var x, int cin, int cout) {
    Var h = ops::relu(tape_, x);
    h = ops::conv2d(tape_, h, param(prefix + ".conv", Shape{cout, cin, 1, 1}, cin), {});
    return norm_layer(prefix + ".bn", h, cout);
  }

  Var factorized_reduce(const std::string& prefix, Var x, int cin, int cout) {
    const int c1 = cout / 2;
    const int c2 = cout - c1;
    Var h = ops::relu(tape_, x);
    Var a = ops::conv2d(tape_, h, param(prefix + ".conv_1", Shape{c1, cin, 1, 1}, cin),
                        Conv2dParams{2, 0, 1, 1});
    Var shifted = ops::crop_leading(tape_, h);
    Var b = ops::conv2d(tape_, shifted, param(prefix + ".conv_2", Shape{c2, cin, 1, 1}, cin),
                        Conv2dParams{2, 0, 1, 1});
    const std::array<Var, 2> parts{a, b};
    Var cat = ops::concat_channels(tape_, parts);
    return norm_layer(prefix + ".bn", cat, cout);
  }

  Var sep_conv(const std::string& prefix, Var x, int c, int k, int stride) {
    const int pad = k / 2;
    Var h = ops::relu(tape_, x);
    h = ops::conv2d(tape_, h, param(prefix + ".dw1", Shape{c, 1, k, k}, k * k),
                    Conv2dParams{stride, pad, 1, c});
    h = ops::conv2d(tape_, h, param(prefix + ".pw1", Shape{c, c, 1, 1}, c), {});
    h = norm_layer(prefix + ".bn1", h, c);
    h = ops::relu(tape_, h);
    h = ops::conv2d(tape_, h, param(prefix + ".dw2", Shape{c, 1, k, k}, k * k),
                    Conv2dParams{1, pad, 1, c});
    h = ops::conv2d(tape_, h, param(prefix + ".pw2", Shape{c, c, 1, 1}, c), {});
    return norm_layer(prefix + ".bn2", h, c);
  }

  Var dil_conv(const std::string& prefix, Var x, int c, int k, int stride) {
    const int pad = k - 1;  // dilation 2
    Var h = ops::relu(tape_, x);
    h = ops::conv2d(tape_, h, param(prefix + ".dw", Shape{c, 1, k, k}, k * k),
                    Conv2dParams{stride, pad, 2, c});
    h = ops::conv2d(tape_, h, param(prefix + ".pw", Shape{c, c, 1, 1}, c), {});
    return norm_layer(prefix + ".bn", h, c);
  }

  std::optional<Var> edge_op(OpKind op, const std::string& prefix, Var x, int c, int stride) {
    const std::string p = prefix + "." + std::string(op_name(op));
    switch (op) {
      case OpKind::kZero: return std::nullopt;
      case OpKind::kSkipConnect: return stride == 1 ? x : factorized_reduce(p, x, c, c);
      case OpKind::kMaxPool3x3: return ops::max_pool(tape_, x, 3, stride, 1);
      case OpKind::kAvgPool3x3: return ops::avg_pool(tape_, x, 3, stride, 1);
      case OpKind::kSepConv3x3: return sep_conv(p, x, c, 3, stride);
      case OpKind::kSepConv5x5: return sep_conv(p, x, c, 5, stride);
      case OpKind::kDilConv3x3: return dil_conv(p, x, c, 3, stride);
      case OpKind::kDilConv5x5: return dil_conv(p, x, c, 5, stride);
    }
    throw std::logic_error("unhandled op");
  }

  Var alpha_var(CellRole r) {
    Var& v = alpha_vars_[static_cast<int>(r)];
    if (!v.valid()) {
      const auto& block = net_.alpha().block(r);
      v = tape_.leaf(Tensor(Shape{net_.alpha().num_edges(), kNumOps, 1, 1}, block), req_.alpha);
    }
    return v;
  }

  Var cell(int index, const CellSlot& slot, Var s0, Var s1, int c_pp, int c_p,
           bool reduction_prev) {
    const std::string prefix = "cells." + std::to_string(index);
    const int c = slot.channels;
    const bool reduction = slot.stride == 2;
    std::vector<Var> states;
    states.push_back(reduction_prev ? factorized_reduce(prefix + ".pre0", s0, c_pp, c)
                                    : relu_conv_bn(prefix + ".pre0", s0, c_pp, c));
    states.push_back(relu_conv_bn(prefix + ".pre1", s1, c_p, c));
    const Shape in_shape = tape_.value(states[1]).shape();
    if (tape_.value(states[0]).shape() != in_shape) {
      throw std::invalid_argument("cell " + std::to_string(index) + " inputs disagree: " +
                                  tape_.value(states[0]).shape().str() + " vs " + in_shape.str());
    }
    const int stride_h = reduction ? 2 : 1;
    const Shape out_shape{in_shape.n, c, in_shape.h / stride_h, in_shape.w / stride_h};
    const CellTopology& topo = net_.topology();
    for (int node = 2; node < topo.num_intermediate_nodes() + 2; ++node) {
      std::vector<Var> inputs;
      if (net_.is_supernet()) {
        const int first = topo.first_edge_of(node);
        for (int e = first; e < first + node; ++e) {
          const int from = topo.edges()[e].from;
          const int stride = reduction && from < 2 ? 2 : 1;
          const std::string ep = prefix + ".edges." + std::to_string(e);
          std::array<std::optional<Var>, kNumOps> cands;
          for (OpKind op : kAllOps)
            cands[static_cast<int>(op)] = edge_op(op, ep, states[from], c, stride);
          inputs.push_back(ops::mixed_sum(tape_, alpha_var(slot.role), e, cands, out_shape));
        }
      } else {
        for (const SelectedEdge& se : net_.genotype().cell(slot.role)) {
          if (se.to != node) continue;
          const int e = topo.edge_index(se.from, se.to);
          const int stride = reduction && se.from < 2 ? 2 : 1;
          const std::string ep = prefix + ".edges." + std::to_string(e);
          auto out = edge_op(se.op, ep, states[se.from], c, stride);
          inputs.push_back(out ? *out : ops::zeros(tape_, out_shape));
        }
      }
      states.push_back(ops::sum(tape_, inputs));
    }
    return ops::concat_channels(tape_, std::span<const Var>(states).subspan(2));
  }

  const Network& net_;
  Tape& tape_;
  ParamStore* weights_;
  ParamStore* buffers_;
  bool create_;
  GradRequest req_;
  ForwardOptions opts_;
  std::map<std::string, Var>* bound_;
  std::array<Var, kNumRoles>* alpha_bound_;
  std::array<Var, kNumRoles> alpha_vars_{};
};

void Network::set_input_normalization(InputNormalization norm) {
  if (norm.mean.size() != norm.stddev.size() ||
      (!norm.mean.empty() && static_cast<int>(norm.mean.size()) != layout_.stem_in_channels)) {
    throw std::invalid_argument("input normalization needs one mean/std per input channel");
  }
  for (double s : norm.stddev)
    if (!(s > 0.0)) throw std::invalid_argument("input normalization std must be positive");
  input_norm_ = std::move(norm);
}

void Network::validate_input(const Shape& s) const {
  const InputShape& in = macro_.input_shape;
  if (s.c != in.channels || s.h != in.height || s.w != in.width) {
    throw std::invalid_argument("input batch " + s.str() + " does not match network input (" +
                                std::to_string(in.channels) + "," + std::to_string(in.height) +
                                "," + std::to_string(in.width) + ")");
  }
}

Var Network::build(Tape& tape, Var input, const GradRequest& req, ForwardOptions opts,
                   std::map<std::string, Var>* bound_weights,
                   std::array<Var, kNumRoles>* bound_alpha) const {
  // Running statistics are only written when opts.update_running_stats is
  // set, which the const entry points never do.
  auto* w = const_cast<ParamStore*>(&weights_);
  auto* b = const_cast<ParamStore*>(&buffers_);
  NetworkBuilder builder(*this, tape, w, b, false, req, opts, bound_weights, bound_alpha);
  return builder.run(input);
}

Tensor Network::forward(const Tensor& x, ForwardOptions opts) const {
  validate_input(x.shape());
  opts.update_running_stats = false;
  Tape tape;
  Var in = tape.leaf(x, false);
  return tape.value(build(tape, in, GradRequest{}, opts, nullptr, nullptr));
}

Tensor Network::forward_train(const Tensor& x, ForwardOptions opts) {
  validate_input(x.shape());
  Tape tape;
  Var in = tape.leaf(x, false);
  NetworkBuilder builder(*this, tape, &weights_, &buffers_, false, GradRequest{}, opts, nullptr,
                         nullptr);
  return tape.value(builder.run(in));
}

GradResult Network::run_gradients(const Tensor& x, std::span<const int> labels,
                                  const GradRequest& req, ForwardOptions opts,
                                  ParamStore* buffers) const {
  validate_input(x.shape());
  Tape tape;
  Var in = tape.leaf(x, req.input);
  std::map<std::string, Var> bound;
  std::array<Var, kNumRoles> alpha_vars{};
  auto* w = const_cast<ParamStore*>(&weights_);
  NetworkBuilder builder(*this, tape, w, buffers, false, req, opts, &bound, &alpha_vars);
  Var logits = builder.run(in);
  Var loss = ops::cross_entropy(tape, logits, labels, req.loss_scale);
  tape.backward(loss);

  GradResult out;
  out.loss = tape.value(loss)[0];
  out.logits = tape.value(logits);
  if (req.weights) {
    out.weights = weights_.zeros_like();
    for (auto& [name, g] : out.weights.entries()) {
      auto it = bound.find(name);
      if (it != bound.end()) g = tape.grad(it->second);
    }
  }
  if (req.alpha) {
    out.alpha = ArchParams(alpha_.num_edges());
    if (is_supernet()) {
      for (CellRole r : kAllRoles) {
        const Var v = alpha_vars[static_cast<int>(r)];
        if (v.valid()) out.alpha.block(r) = tape.grad(v).values();
      }
    }
  }
  if (req.input) out.input = tape.grad(in);
  return out;
}

GradResult Network::gradients(const Tensor& x, std::span<const int> labels,
                              const GradRequest& req, ForwardOptions opts) const {
  opts.update_running_stats = false;
  return run_gradients(x, labels, req, opts, const_cast<ParamStore*>(&buffers_));
}

GradResult Network::gradients_train(const Tensor& x, std::span<const int> labels,
                                    const GradRequest& req, ForwardOptions opts) {
  return run_gradients(x, labels, req, opts, &buffers_);
}

namespace {

void declare_parameters(Network& net, ParamStore& weights, ParamStore& buffers) {
  const InputShape& in = net.macro().input_shape;
  if (in.height % 4 != 0 || in.width % 4 != 0) {
    throw ConfigError("input height and width must be divisible by 4 (two 2x reductions)");
  }
  Tape tape;
  Var x = tape.leaf(Tensor(Shape{1, in.channels, in.height, in.width}), false);
  NetworkBuilder builder(net, tape, &weights, &buffers, true, GradRequest{}, ForwardOptions{},
                         nullptr, nullptr);
  builder.run(x);
}

}  // namespace

Network init_supernet(const MacroConfig& cfg, const CellTopology& topo, std::uint64_t seed) {
  Network net;
  net.kind_ = NetworkKind::kSupernet;
  net.macro_ = cfg;
  net.topo_ = topo;
  net.layout_ = build_macro_layout(cfg, topo.num_intermediate_nodes());
  net.affine_ = false;
  net.seed_ = seed;
  net.alpha_ = ArchParams(topo.num_edges());
  auto rng = named_rng(seed, "alpha");
  std::normal_distribution<double> dist(0.0, 1.0);
  for (CellRole r : kAllRoles)
    for (double& v : net.alpha_.block(r)) v = 1e-3 * dist(rng);
  declare_parameters(net, net.weights_, net.buffers_);
  return net;
}

Network instantiate_discrete(const Genotype& g, const MacroConfig& cfg, std::uint64_t seed) {
  validate_genotype(g);
  Network net;
  net.kind_ = NetworkKind::kDiscrete;
  net.macro_ = cfg;
  net.topo_ = CellTopology(g.num_intermediate_nodes);
  net.layout_ = build_macro_layout(cfg, g.num_intermediate_nodes);
  net.affine_ = true;
  net.seed_ = seed;
  net.genotype_ = g;
  net.alpha_ = ArchParams(net.topo_.num_edges());
  declare_parameters(net, net.weights_, net.buffers_);
  return net;
}

int share_weights(const Network& from, Network& to) {
  int copied = 0;
  for (auto& [name, t] : to.weights().entries()) {
    if (!from.weights().contains(name)) continue;
    const Tensor& src = from.weights().at(name);
    if (!(src.shape() == t.shape())) continue;
    t = src;
    ++copied;
  }
  return copied;
}

double cross_entropy_loss(const Tensor& logits, std::span<const int> labels) {
  Tape tape;
  Var l = tape.leaf(logits, false);
  return tape.value(ops::cross_entropy(tape, l, labels))[0];
}

Tensor NetworkClassifier::logits(const Tensor& x) const {
  return net_->forward(x, ForwardOptions{mode_, false});
}

double NetworkClassifier::loss_input_gradient(const Tensor& x, std::span<const int> y,
                                              Tensor& grad) const {
  GradRequest req;
  req.input = true;
  GradResult r = net_->gradients(x, y, req, ForwardOptions{mode_, false});
  grad = std::move(r.input);
  return r.loss;
}

}  // namespace arnas
