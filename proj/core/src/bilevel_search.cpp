#include "arnas/bilevel_search.hpp"

#include <cmath>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include <spdlog/spdlog.h>

#include "arnas/mgda.hpp"
#include "arnas/seed.hpp"

namespace arnas {

void SearchConfig::validate() const {
  if (epochs < 0) throw ConfigError("search epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("search batch_size must be >= 1");
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
  if (!(weight_lr > 0.0) || !(arch_lr > 0.0)) throw ConfigError("learning rates must be positive");
  if (weight_lr_min < 0.0 || weight_lr_min > weight_lr) throw ConfigError("weight_lr_min must lie in [0, weight_lr]");
  if (unroll_lr && *unroll_lr < 0.0) throw ConfigError("unroll_lr must be >= 0");
  if (!(fd_scale > 0.0)) throw ConfigError("fd_scale must be positive");
  attack.validate();
}

double SearchConfig::weight_lr_at(int epoch) const {
  if (epochs <= 0) return weight_lr;
  return weight_lr_min +
         (weight_lr - weight_lr_min) * 0.5 * (1.0 + std::cos(std::numbers::pi * epoch / epochs));
}

ArchGradient arch_gradient_second_order(UnrolledObjective& objective, UnrollCache& cache,
                                        LossKind kind, double xi, double fd_scale) {
  const std::vector<double> w = objective.current_weights();
  if (!cache.unrolled) {
    std::vector<double> unrolled = w;
    if (xi != 0.0) {
      const FlatGradients g = objective.train_gradients(w);
      for (std::size_t i = 0; i < unrolled.size(); ++i) unrolled[i] -= xi * g.weights[i];
    }
    cache.unrolled = std::move(unrolled);
    ++cache.unroll_computations;
  }
  FlatGradients val = objective.val_gradients(*cache.unrolled, kind);
  ArchGradient out{std::move(val.arch), val.loss};
  if (xi == 0.0) return out;

  const double norm = l2_norm(val.weights);
  if (!(norm > 0.0)) return out;
  const double h = fd_scale / norm;
  std::vector<double> w_plus = w;
  std::vector<double> w_minus = w;
  for (std::size_t i = 0; i < w.size(); ++i) {
    w_plus[i] += h * val.weights[i];
    w_minus[i] -= h * val.weights[i];
  }
  const FlatGradients gp = objective.train_gradients(w_plus);
  const FlatGradients gm = objective.train_gradients(w_minus);
  for (std::size_t i = 0; i < out.grad.size(); ++i)
    out.grad[i] -= xi * (gp.arch[i] - gm.arch[i]) / (2.0 * h);
  return out;
}

namespace {

constexpr ForwardOptions kSearchForward{NormMode::kBatch, false};

FlatGradients flat_gradients(const GradResult& r) {
  return FlatGradients{r.loss, r.weights.flatten(), r.alpha.flatten()};
}

}  // namespace

SupernetObjective::SupernetObjective(const Network& net, const Batch& train, const Batch& val,
                                     const SearchConfig& cfg, std::uint64_t attack_seed)
    : net_(net), scratch_(net), train_(train), val_(val), cfg_(cfg), attack_seed_(attack_seed) {}

std::vector<double> SupernetObjective::current_weights() const { return net_.weights().flatten(); }

const Tensor& SupernetObjective::train_adversarial() {
  if (!train_adv_) {
    NetworkClassifier model(net_, NormMode::kBatch);
    train_adv_ = pgd(model, train_.images, train_.labels, cfg_.attack, derive_seed(attack_seed_, 1));
    ++pgd_generations_;
  }
  return *train_adv_;
}

FlatGradients SupernetObjective::train_gradients(std::span<const double> weights) {
  const Tensor& x = train_adversarial();
  scratch_.weights().assign_flat(weights);
  scratch_.alpha() = net_.alpha();
  GradRequest req;
  req.weights = true;
  req.alpha = true;
  return flat_gradients(scratch_.gradients(x, train_.labels, req, kSearchForward));
}

FlatGradients SupernetObjective::val_gradients(std::span<const double> weights, LossKind kind) {
  scratch_.weights().assign_flat(weights);
  scratch_.alpha() = net_.alpha();
  GradRequest req;
  req.weights = true;
  req.alpha = true;
  if (kind == LossKind::kNatural) {
    return flat_gradients(scratch_.gradients(val_.images, val_.labels, req, kSearchForward));
  }
  if (!val_adv_) {
    NetworkClassifier model(scratch_, NormMode::kBatch);
    val_adv_ = pgd(model, val_.images, val_.labels, cfg_.attack, derive_seed(attack_seed_, 2));
    ++pgd_generations_;
  }
  req.loss_scale = cfg_.lambda;
  FlatGradients g = flat_gradients(scratch_.gradients(*val_adv_, val_.labels, req, kSearchForward));
  // report the unscaled loss
  g.loss = cross_entropy_loss(
      scratch_.forward(*val_adv_, kSearchForward), val_.labels);
  return g;
}

ArchOptimizer::ArchOptimizer(const SearchConfig& cfg)
    : kind_(cfg.arch_optimizer),
      lr_(cfg.arch_lr),
      adam_(cfg.arch_lr, cfg.arch_beta1, cfg.arch_beta2, cfg.arch_weight_decay) {}

void ArchOptimizer::step(ArchParams& alpha, std::span<const double> direction) {
  std::vector<double> flat = alpha.flatten();
  if (kind_ == ArchOptimizerKind::kAdam) {
    adam_.step(flat, direction);
  } else {
    for (std::size_t i = 0; i < flat.size(); ++i) flat[i] -= lr_ * direction[i];
  }
  alpha = ArchParams::unflatten(alpha.num_edges(), flat);
}

namespace {

void require_finite_blocks(const std::vector<double>& g, int num_edges, const char* which) {
  const std::size_t per = static_cast<std::size_t>(num_edges) * kNumOps;
  for (CellRole r : kAllRoles) {
    const std::size_t off = static_cast<std::size_t>(r) * per;
    if (!all_finite(std::span<const double>(g.data() + off, per))) {
      throw std::runtime_error(std::string("non-finite ") + which +
                               " architecture gradient in the " + std::string(role_name(r)) +
                               " alpha block");
    }
  }
}

}  // namespace

StepRecord outer_arch_step(Network& net, const Batch& train, const Batch& val,
                           const SearchConfig& cfg, ArchOptimizer& optimizer,
                           const OuterStepInfo& info, UnrollCache* cache_out,
                           int* pgd_generations_out) {
  const std::uint64_t attack_seed =
      derive_seed(cfg.seed, (static_cast<std::uint64_t>(info.epoch) << 32) ^ static_cast<std::uint64_t>(info.step));
  SupernetObjective objective(net, train, val, cfg, attack_seed);
  UnrollCache cache;
  const ArchGradient nat =
      arch_gradient_second_order(objective, cache, LossKind::kNatural, info.unroll_lr, cfg.fd_scale);
  const ArchGradient adv =
      arch_gradient_second_order(objective, cache, LossKind::kAdversarial, info.unroll_lr, cfg.fd_scale);
  const int edges = net.alpha().num_edges();
  require_finite_blocks(nat.grad, edges, "natural");
  require_finite_blocks(adv.grad, edges, "adversarial");

  const double gamma = mgda::gamma_star(nat.grad, adv.grad);
  const std::vector<double> d = mgda::combine(nat.grad, adv.grad, gamma);

  const double dd = dot(d, d);
  const double scale = std::max({dot(nat.grad, nat.grad), dot(adv.grad, adv.grad), 1e-300});
  if (dot(d, nat.grad) < dd - 1e-6 * scale || dot(d, adv.grad) < dd - 1e-6 * scale) {
    throw std::logic_error("combined architecture direction violates the min-norm property");
  }
  if (l2_norm(adv.grad) == 0.0) {
    spdlog::warn("adversarial architecture gradient is zero (lambda = {}); the min-norm "
                 "direction is zero and alpha will not move", cfg.lambda);
  }
  optimizer.step(net.alpha(), d);

  if (cache_out != nullptr) *cache_out = cache;
  if (pgd_generations_out != nullptr) *pgd_generations_out = objective.pgd_generations();
  return StepRecord{info.epoch, info.step, nat.val_loss, adv.val_loss, gamma,
                    l2_norm(nat.grad), l2_norm(adv.grad)};
}

double inner_weight_step(Network& net, const Batch& train, const SearchConfig& cfg,
                         SgdMomentum& optimizer, double lr, std::uint64_t attack_seed) {
  Tensor x_adv;
  {
    NetworkClassifier model(net, NormMode::kBatch);
    x_adv = pgd(model, train.images, train.labels, cfg.attack, attack_seed);
  }
  GradRequest req;
  req.weights = true;
  const GradResult g = net.gradients_train(x_adv, train.labels, req, ForwardOptions{NormMode::kBatch, true});
  if (!std::isfinite(g.loss)) throw std::runtime_error("non-finite adversarial training loss in search");
  std::vector<double> w = net.weights().flatten();
  const std::vector<double> grad = g.weights.flatten();
  optimizer.step(w, grad, lr);
  net.weights().assign_flat(w);
  return g.loss;
}

SearchResult search(const SearchConfig& cfg, MacroConfig macro, const DatasetSplits& data,
                    const CellTopology& topo, const SearchProgress& progress) {
  cfg.validate();
  macro.num_classes = data.num_classes;
  macro.input_shape = data.input_shape;
  SearchResult result{init_supernet(macro, topo, cfg.seed), Genotype{}, {}};
  Network& net = result.supernet;
  net.set_input_normalization(data.normalization);

  SgdMomentum weight_opt(cfg.weight_momentum, cfg.weight_decay);
  ArchOptimizer arch_opt(cfg);
  const int steps = std::min(data.train.num_batches(cfg.batch_size), data.val.num_batches(cfg.batch_size));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.weight_lr_at(epoch);
    const double xi = cfg.unroll_lr.value_or(lr);
    for (int step = 0; step < steps; ++step) {
      const Batch train = data.train.batch(epoch, step, cfg.batch_size);
      const Batch val = data.val.batch(epoch, step, cfg.batch_size);
      StepRecord rec = outer_arch_step(net, train, val, cfg, arch_opt, OuterStepInfo{epoch, step, xi});
      const std::uint64_t inner_seed =
          derive_seed(cfg.seed ^ 0x1234567ull, (static_cast<std::uint64_t>(epoch) << 32) ^ static_cast<std::uint64_t>(step));
      inner_weight_step(net, train, cfg, weight_opt, lr, inner_seed);
      if (!std::isfinite(rec.nat_val_loss) || !std::isfinite(rec.adv_val_loss)) {
        throw std::runtime_error("non-finite validation loss at epoch " + std::to_string(epoch) +
                                 ", step " + std::to_string(step));
      }
      result.history.push_back(rec);
      if (progress) progress(rec);
    }
  }
  result.genotype = discretize(net.alpha(), topo);
  return result;
}

std::string history_csv(const std::vector<StepRecord>& history) {
  std::ostringstream out;
  out << "epoch,step,nat_val_loss,adv_val_loss,gamma_star,grad_norm_theta,grad_norm_theta_bar\n";
  out << std::setprecision(17);
  for (const StepRecord& r : history) {
    out << r.epoch << ',' << r.step << ',' << r.nat_val_loss << ',' << r.adv_val_loss << ','
        << r.gamma_star << ',' << r.grad_norm_theta << ',' << r.grad_norm_theta_bar << '\n';
  }
  return out.str();
}

}  // namespace arnas
