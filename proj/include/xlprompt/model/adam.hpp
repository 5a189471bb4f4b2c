#pragma once

#include <cmath>

#include "xlprompt/model/parameters.hpp"

namespace xlprompt {

/// Adam with bias correction; constant learning rate, no weight decay.
class Adam {
public:
  explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParameterSet& params, const ParameterSet& grads) {
    if (first_.size() == 0) {
      first_ = params.zeros_like();
      second_ = params.zeros_like();
    }
    params.check_compatible(grads);
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      first_[i] = beta1_ * first_[i] + (1.0 - beta1_) * grads[i];
      second_[i] = beta2_ * second_[i] + (1.0 - beta2_) * grads[i].cwiseProduct(grads[i]);
      params[i].array() -= lr_ * (first_[i].array() / c1) / ((second_[i].array() / c2).sqrt() + eps_);
    }
  }

  long steps() const noexcept { return t_; }
  double learning_rate() const noexcept { return lr_; }

private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  ParameterSet first_, second_;
};

} // namespace xlprompt
