#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "cdrl/tensor.hpp"

namespace cdrl {

// Adam over a flat list of parameter tensors, paired with gradients by index.
class Adam {
 public:
  explicit Adam(double lr = 1e-4, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads) {
    if (m_.empty()) {
      for (Tensor* p : params) {
        m_.push_back(Tensor::zeros(p->shape()));
        v_.push_back(Tensor::zeros(p->shape()));
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor& p = *params[i];
      const Tensor& g = *grads[i];
      Tensor& m = m_[i];
      Tensor& v = v_[i];
      for (std::size_t j = 0; j < p.numel(); ++j) {
        m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
        v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
        p[j] -= lr_ * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps_);
      }
    }
  }

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Tensor> m_, v_;
};

class Sgd {
 public:
  explicit Sgd(double lr) : lr_(lr) {}

  void step(std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor& p = *params[i];
      const Tensor& g = *grads[i];
      for (std::size_t j = 0; j < p.numel(); ++j) p[j] -= lr_ * g[j];
    }
  }

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

 private:
  double lr_;
};

// Step schedule: rate is divided by 10 after each listed epoch (1-indexed).
// drops {2,4,6} with base 0.1 gives 0.1,0.1,0.01,0.01,0.001,0.001,1e-4,...
inline double scheduled_lr(double base, const std::vector<int>& drop_after_epochs,
                           int epoch_1indexed) {
  double lr = base;
  for (int d : drop_after_epochs)
    if (epoch_1indexed > d) lr *= 0.1;
  return lr;
}

}  // namespace cdrl
