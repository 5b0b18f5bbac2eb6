#pragma once

#include <span>
#include <vector>

namespace arnas::mgda {

/// Below this squared distance the two gradients are treated as equal and
/// the weight is the midpoint 0.5.
inline constexpr double kDegenerateSquaredDistance = 1e-24;

/// Closed-form minimizer over gamma in [0, 1] of
/// || gamma * theta + (1 - gamma) * theta_bar ||^2.
/// Throws std::invalid_argument on length mismatch or non-finite input.
double gamma_star(std::span<const double> theta, std::span<const double> theta_bar);

/// gamma * theta + (1 - gamma) * theta_bar.
std::vector<double> combine(std::span<const double> theta, std::span<const double> theta_bar,
                            double gamma);

}  // namespace arnas::mgda
