#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "arnas/autodiff.hpp"
#include "arnas/search_space.hpp"
#include "arnas/tensor.hpp"

namespace arnas {

/// Named parameter arrays, iterated in name order.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor value);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  const std::map<std::string, Tensor>& entries() const { return params_; }
  std::map<std::string, Tensor>& entries() { return params_; }
  std::size_t total_size() const;

  /// Concatenation of all arrays in name order.
  std::vector<double> flatten() const;
  void assign_flat(std::span<const double> flat);
  /// Same names and shapes, all zeros.
  ParamStore zeros_like() const;

  bool operator==(const ParamStore&) const = default;

 private:
  std::map<std::string, Tensor> params_;
};

/// Input standardization folded into the first layer; attacks therefore
/// work in raw [0, 1] pixel space.
struct InputNormalization {
  std::vector<double> mean;
  std::vector<double> stddev;
  bool operator==(const InputNormalization&) const = default;
};

enum class NetworkKind { kSupernet, kDiscrete };

struct ForwardOptions {
  NormMode norm = NormMode::kBatch;
  bool update_running_stats = false;
};

/// Which gradients gradients() should produce.
struct GradRequest {
  bool weights = false;
  bool alpha = false;
  bool input = false;
  double loss_scale = 1.0;
};

struct GradResult {
  double loss = 0.0;  // already multiplied by loss_scale
  Tensor logits;
  ParamStore weights;  // empty unless requested
  ArchParams alpha;    // empty unless requested
  Tensor input;        // empty unless requested
};

/// A cell-based network: either the continuously relaxed supernet (every
/// candidate op on every edge, mixed by softmax(alpha)) or a discrete
/// network instantiated from a genotype.
class Network {
 public:
  NetworkKind kind() const { return kind_; }
  bool is_supernet() const { return kind_ == NetworkKind::kSupernet; }
  const MacroConfig& macro() const { return macro_; }
  const CellTopology& topology() const { return topo_; }
  const LayoutPlan& layout() const { return layout_; }
  bool affine_norm() const { return affine_; }
  std::uint64_t seed() const { return seed_; }

  const InputNormalization& input_normalization() const { return input_norm_; }
  void set_input_normalization(InputNormalization norm);

  ParamStore& weights() { return weights_; }
  const ParamStore& weights() const { return weights_; }
  ParamStore& buffers() { return buffers_; }
  const ParamStore& buffers() const { return buffers_; }

  /// Only meaningful for supernets.
  ArchParams& alpha() { return alpha_; }
  const ArchParams& alpha() const { return alpha_; }
  /// Only meaningful for discrete networks.
  const Genotype& genotype() const { return genotype_; }

  /// Class logits (N, K, 1, 1). Never touches running statistics.
  Tensor forward(const Tensor& x, ForwardOptions opts = {}) const;
  /// Forward that may update running statistics (training steps).
  Tensor forward_train(const Tensor& x, ForwardOptions opts);

  /// Mean cross-entropy of the batch and the requested exact gradients.
  GradResult gradients(const Tensor& x, std::span<const int> labels, const GradRequest& req,
                       ForwardOptions opts = {}) const;
  GradResult gradients_train(const Tensor& x, std::span<const int> labels,
                             const GradRequest& req, ForwardOptions opts);

  /// Records the full forward graph on `tape`, returning the logits var.
  /// Parameter leaves are created with requires_grad per `req`.
  Var build(Tape& tape, Var input, const GradRequest& req, ForwardOptions opts,
            std::map<std::string, Var>* bound_weights, std::array<Var, kNumRoles>* bound_alpha) const;

  void validate_input(const Shape& s) const;

 private:
  friend Network init_supernet(const MacroConfig&, const CellTopology&, std::uint64_t);
  friend Network instantiate_discrete(const Genotype&, const MacroConfig&, std::uint64_t);
  friend class NetworkBuilder;

  GradResult run_gradients(const Tensor& x, std::span<const int> labels,
                           const GradRequest& req, ForwardOptions opts, ParamStore* buffers) const;

  NetworkKind kind_ = NetworkKind::kSupernet;
  MacroConfig macro_;
  CellTopology topo_{4};
  LayoutPlan layout_;
  bool affine_ = false;
  std::uint64_t seed_ = 0;
  InputNormalization input_norm_;
  ParamStore weights_;
  ParamStore buffers_;
  ArchParams alpha_;
  Genotype genotype_;
};

/// Supernet with alpha ~ 1e-3 * N(0, 1) and fan-in scaled weights;
/// normalization layers are not affine. Deterministic given the seed.
Network init_supernet(const MacroConfig& cfg, const CellTopology& topo, std::uint64_t seed);

/// Discrete network materializing only the genotype's ops, with affine
/// normalization. Parameter names coincide with the supernet's names for
/// the same ops so weights can be shared by name.
Network instantiate_discrete(const Genotype& g, const MacroConfig& cfg, std::uint64_t seed);

/// Copies every weight of `from` whose name and shape exist in `to`.
/// Returns the number of arrays copied.
int share_weights(const Network& from, Network& to);

/// Mean cross-entropy, computed without recording a tape.
double cross_entropy_loss(const Tensor& logits, std::span<const int> labels);

/// Interface used by attacks and evaluation.
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual Tensor logits(const Tensor& x) const = 0;
  /// Mean cross-entropy of (x, y) and its gradient with respect to x.
  virtual double loss_input_gradient(const Tensor& x, std::span<const int> y,
                                     Tensor& grad) const = 0;
};

/// Classifier view over a network with a fixed normalization mode.
class NetworkClassifier : public Classifier {
 public:
  NetworkClassifier(const Network& net, NormMode mode) : net_(&net), mode_(mode) {}
  Tensor logits(const Tensor& x) const override;
  double loss_input_gradient(const Tensor& x, std::span<const int> y,
                             Tensor& grad) const override;

 private:
  const Network* net_;
  NormMode mode_;
};

}  // namespace arnas
