#include "arnas/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace arnas {

void SgdMomentum::step(std::span<double> params, std::span<const double> grad, double lr) {
  if (params.size() != grad.size()) throw std::invalid_argument("sgd: gradient length mismatch");
  if (buffer_.empty()) buffer_.assign(params.size(), 0.0);
  if (buffer_.size() != params.size()) throw std::invalid_argument("sgd: parameter count changed");
  const bool first = !started_;
  started_ = true;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grad[i] + weight_decay_ * params[i];
    buffer_[i] = first ? g : momentum_ * buffer_[i] + g;
    params[i] -= lr * buffer_[i];
  }
}

void Adam::step(std::span<double> params, std::span<const double> grad) {
  if (params.size() != grad.size()) throw std::invalid_argument("adam: gradient length mismatch");
  if (m_.empty()) {
    m_.assign(params.size(), 0.0);
    v_.assign(params.size(), 0.0);
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, t_);
  const double bc2 = 1.0 - std::pow(beta2_, t_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grad[i] + weight_decay_ * params[i];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g * g;
    const double denom = std::sqrt(v_[i] / bc2) + eps_;
    params[i] -= lr_ * (m_[i] / bc1) / denom;
  }
}

}  // namespace arnas
