#pragma once

#include <span>
#include <vector>

namespace arnas {

/// Heavy-ball SGD with L2 weight decay folded into the gradient.
class SgdMomentum {
 public:
  SgdMomentum(double momentum, double weight_decay)
      : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(std::span<double> params, std::span<const double> grad, double lr);

 private:
  double momentum_;
  double weight_decay_;
  bool started_ = false;
  std::vector<double> buffer_;
};

/// Adam with L2 weight decay added to the gradient before the moment updates.
class Adam {
 public:
  Adam(double lr, double beta1, double beta2, double weight_decay, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), weight_decay_(weight_decay), eps_(eps) {}

  void step(std::span<double> params, std::span<const double> grad);
  int steps_taken() const { return t_; }

 private:
  double lr_;
  double beta1_;
  double beta2_;
  double weight_decay_;
  double eps_;
  int t_ = 0;
  std::vector<double> m_;
  std::vector<double> v_;
};

}  // namespace arnas
