#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "arnas/network.hpp"
#include "arnas/tensor.hpp"

namespace arnas {

/// l-infinity attack settings in raw [0, 1] pixel units.
struct AttackConfig {
  std::string name = "pgd";
  double epsilon = 8.0 / 255.0;
  double step_size = 2.0 / 255.0;
  int steps = 7;
  bool random_start = true;
  double clip_min = 0.0;
  double clip_max = 1.0;

  /// Throws ConfigError on negative budgets or an empty clip range.
  void validate() const;

  static AttackConfig fgsm(double epsilon = 8.0 / 255.0);
  static AttackConfig pgd(int steps, double epsilon = 8.0 / 255.0, double step_size = 2.0 / 255.0,
                          bool random_start = true);
};

/// clip(x + eps * sign(grad_x loss), 0, 1) with sign(0) = 0.
Tensor fgsm(const Classifier& model, const Tensor& x, std::span<const int> y, double epsilon);

/// Projected sign-gradient ascent. Each step moves by step_size * sign(g),
/// then clamps to [x - eps, x + eps] and then to the pixel range. The
/// random start draws U(-eps, eps) noise from `seed`.
Tensor pgd(const Classifier& model, const Tensor& x, std::span<const int> y,
           const AttackConfig& cfg, std::uint64_t seed = 0);

/// Dispatches on the config; fgsm configs produce exactly fgsm().
Tensor attack(const Classifier& model, const Tensor& x, std::span<const int> y,
              const AttackConfig& cfg, std::uint64_t seed = 0);

}  // namespace arnas
