#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "arnas/attacks.hpp"
#include "arnas/data.hpp"
#include "arnas/network.hpp"
#include "arnas/optim.hpp"
#include "arnas/search_space.hpp"

namespace arnas {

enum class ArchOptimizerKind {
  kAdam,
  kGradientDescent,  // plain alpha -= lr * d; used to compare against reference trajectories
};

struct SearchConfig {
  int epochs = 50;
  int batch_size = 64;
  double lambda = 0.1;
  AttackConfig attack = AttackConfig::pgd(7, 8.0 / 255.0, 2.0 / 255.0, true);

  double weight_lr = 0.025;  // cosine-annealed to weight_lr_min over the epochs
  double weight_lr_min = 0.0;
  double weight_momentum = 0.9;
  double weight_decay = 3e-4;

  ArchOptimizerKind arch_optimizer = ArchOptimizerKind::kAdam;
  double arch_lr = 3e-4;
  double arch_beta1 = 0.5;
  double arch_beta2 = 0.999;
  double arch_weight_decay = 1e-3;

  /// Unroll step xi; defaults to the current weight learning rate. 0 gives
  /// the first-order approximation.
  std::optional<double> unroll_lr;
  double fd_scale = 0.01;
  std::uint64_t seed = 0;

  void validate() const;
  /// Cosine-annealed weight learning rate for `epoch` (0-based).
  double weight_lr_at(int epoch) const;
};

struct StepRecord {
  int epoch = 0;
  int step = 0;
  double nat_val_loss = 0.0;
  double adv_val_loss = 0.0;
  double gamma_star = 0.0;
  double grad_norm_theta = 0.0;
  double grad_norm_theta_bar = 0.0;
};

enum class LossKind { kNatural, kAdversarial };

struct FlatGradients {
  double loss = 0.0;  // unscaled loss value
  std::vector<double> weights;
  std::vector<double> arch;
};

/// Flat-vector view of the bilevel problem: a lower-level training loss
/// and the two upper-level validation losses, both differentiable with
/// respect to the weights and the architecture parameters.
class UnrolledObjective {
 public:
  virtual ~UnrolledObjective() = default;
  virtual std::vector<double> current_weights() const = 0;
  virtual FlatGradients train_gradients(std::span<const double> weights) = 0;
  /// Gradients of the validation loss of `kind` (adversarial ones already
  /// multiplied by lambda).
  virtual FlatGradients val_gradients(std::span<const double> weights, LossKind kind) = 0;
};

/// Per-outer-step cache of the unrolled weights w' = w - xi * grad_w L_train.
struct UnrollCache {
  std::optional<std::vector<double>> unrolled;
  int unroll_computations = 0;
};

struct ArchGradient {
  std::vector<double> grad;
  double val_loss = 0.0;
};

/// grad_a L_val(w', a) - xi * [grad_a L_train(w+, a) - grad_a L_train(w-, a)] / (2h)
/// with w+- = w +- h * grad_w' L_val(w', a) and h = fd_scale / ||grad_w' L_val||.
/// The correction term is skipped when grad_w' L_val vanishes or xi == 0.
ArchGradient arch_gradient_second_order(UnrolledObjective& objective, UnrollCache& cache,
                                        LossKind kind, double xi, double fd_scale);

/// The supernet objective on one (train, val) batch pair. Adversarial
/// training examples are generated once against the current weights;
/// adversarial validation examples once against the unrolled weights.
class SupernetObjective : public UnrolledObjective {
 public:
  SupernetObjective(const Network& net, const Batch& train, const Batch& val,
                    const SearchConfig& cfg, std::uint64_t attack_seed);

  std::vector<double> current_weights() const override;
  FlatGradients train_gradients(std::span<const double> weights) override;
  FlatGradients val_gradients(std::span<const double> weights, LossKind kind) override;

  int pgd_generations() const { return pgd_generations_; }

 private:
  const Tensor& train_adversarial();

  const Network& net_;
  Network scratch_;
  const Batch& train_;
  const Batch& val_;
  SearchConfig cfg_;
  std::uint64_t attack_seed_;
  std::optional<Tensor> train_adv_;
  std::optional<Tensor> val_adv_;
  int pgd_generations_ = 0;
};

/// Architecture optimizer selected by SearchConfig::arch_optimizer.
class ArchOptimizer {
 public:
  explicit ArchOptimizer(const SearchConfig& cfg);
  void step(ArchParams& alpha, std::span<const double> direction);

 private:
  ArchOptimizerKind kind_;
  double lr_;
  Adam adam_;
};

struct OuterStepInfo {
  int epoch = 0;
  int step = 0;
  double unroll_lr = 0.0;
};

/// One MGDA-weighted architecture update. Throws std::runtime_error naming
/// the alpha block if a gradient is not finite.
StepRecord outer_arch_step(Network& net, const Batch& train, const Batch& val,
                           const SearchConfig& cfg, ArchOptimizer& optimizer,
                           const OuterStepInfo& info, UnrollCache* cache_out = nullptr,
                           int* pgd_generations_out = nullptr);

/// One SGD step on the adversarial training loss; alpha is not touched.
/// Returns the adversarial loss before the step.
double inner_weight_step(Network& net, const Batch& train, const SearchConfig& cfg,
                         SgdMomentum& optimizer, double lr, std::uint64_t attack_seed);

struct SearchResult {
  Network supernet;
  Genotype genotype;
  std::vector<StepRecord> history;
};

using SearchProgress = std::function<void(const StepRecord&)>;

/// Alternates outer (architecture) and inner (weight) steps over each
/// epoch, then discretizes alpha. `macro.num_classes` and
/// `macro.input_shape` are taken from the data.
SearchResult search(const SearchConfig& cfg, MacroConfig macro, const DatasetSplits& data,
                    const CellTopology& topo = CellTopology(4),
                    const SearchProgress& progress = {});

/// History as CSV with header
/// epoch,step,nat_val_loss,adv_val_loss,gamma_star,grad_norm_theta,grad_norm_theta_bar
std::string history_csv(const std::vector<StepRecord>& history);

}  // namespace arnas
