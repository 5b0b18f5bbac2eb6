#include "arnas/attacks.hpp"

#include <algorithm>
#include <random>

namespace arnas {

namespace {

inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0)) throw ConfigError("attack epsilon must be >= 0");
  if (!(step_size >= 0.0)) throw ConfigError("attack step_size must be >= 0");
  if (steps < 0) throw ConfigError("attack steps must be >= 0");
  if (!(clip_min < clip_max)) throw ConfigError("attack clip range is empty");
}

AttackConfig AttackConfig::fgsm(double epsilon) {
  AttackConfig c;
  c.name = "fgsm";
  c.epsilon = epsilon;
  c.step_size = epsilon;
  c.steps = 1;
  c.random_start = false;
  return c;
}

AttackConfig AttackConfig::pgd(int steps, double epsilon, double step_size, bool random_start) {
  AttackConfig c;
  c.name = "pgd" + std::to_string(steps);
  c.epsilon = epsilon;
  c.step_size = step_size;
  c.steps = steps;
  c.random_start = random_start;
  return c;
}

Tensor fgsm(const Classifier& model, const Tensor& x, std::span<const int> y, double epsilon) {
  Tensor grad;
  model.loss_input_gradient(x, y, grad);
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::clamp(x[i] + epsilon * sign(grad[i]), 0.0, 1.0);
  return out;
}

Tensor pgd(const Classifier& model, const Tensor& x, std::span<const int> y,
           const AttackConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const double eps = cfg.epsilon;
  Tensor adv = x;
  if (cfg.random_start && eps > 0.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> noise(-eps, eps);
    for (std::size_t i = 0; i < adv.size(); ++i)
      adv[i] = std::clamp(x[i] + noise(rng), cfg.clip_min, cfg.clip_max);
  }
  Tensor grad;
  for (int step = 0; step < cfg.steps; ++step) {
    model.loss_input_gradient(adv, y, grad);
    for (std::size_t i = 0; i < adv.size(); ++i) {
      const double moved = adv[i] + cfg.step_size * sign(grad[i]);
      const double projected = std::clamp(moved, x[i] - eps, x[i] + eps);
      adv[i] = std::clamp(projected, cfg.clip_min, cfg.clip_max);
    }
  }
  return adv;
}

Tensor attack(const Classifier& model, const Tensor& x, std::span<const int> y,
              const AttackConfig& cfg, std::uint64_t seed) {
  if (cfg.steps == 1 && !cfg.random_start && cfg.step_size == cfg.epsilon) {
    return fgsm(model, x, y, cfg.epsilon);
  }
  return pgd(model, x, y, cfg, seed);
}

}  // namespace arnas
