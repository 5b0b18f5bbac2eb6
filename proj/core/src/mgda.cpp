#include "arnas/mgda.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace arnas::mgda {

namespace {

void check_pair(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("gradient lengths differ: " + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()));
  }
}

}  // namespace

double gamma_star(std::span<const double> theta, std::span<const double> theta_bar) {
  check_pair(theta, theta_bar);
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    if (!std::isfinite(theta[i]) || !std::isfinite(theta_bar[i])) {
      throw std::invalid_argument("non-finite gradient entry at index " + std::to_string(i));
    }
    const double diff = theta_bar[i] - theta[i];
    num += diff * theta_bar[i];
    den += diff * diff;
  }
  if (den < kDegenerateSquaredDistance) return 0.5;
  return std::clamp(num / den, 0.0, 1.0);
}

std::vector<double> combine(std::span<const double> theta, std::span<const double> theta_bar,
                            double gamma) {
  check_pair(theta, theta_bar);
  if (!(gamma >= 0.0 && gamma <= 1.0)) {
    throw std::invalid_argument("combination weight must lie in [0, 1]");
  }
  std::vector<double> d(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) d[i] = gamma * theta[i] + (1.0 - gamma) * theta_bar[i];
  return d;
}

}  // namespace arnas::mgda
