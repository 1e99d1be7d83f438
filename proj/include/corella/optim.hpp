#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "corella/autodiff.hpp"

namespace corella {

// Adam with optional decoupled weight decay. State is kept per parameter
// tensor in registration order, so two optimizers built over the same
// parameter list behave identically.
class Adam {
 public:
  explicit Adam(std::vector<ad::Tensor> params, double lr = 1e-3, double weight_decay = 0.0,
                double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)),
        lr_(lr),
        weight_decay_(weight_decay),
        beta1_(beta1),
        beta2_(beta2),
        eps_(eps) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(params_[i].numel(), 0.0);
      v_[i].assign(params_[i].numel(), 0.0);
    }
  }

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t p = 0; p < params_.size(); ++p) {
      const std::vector<double>& g = params_[p].grad();
      std::vector<double>& m = m_[p];
      std::vector<double>& v = v_[p];
      params_[p].apply_update([&](std::vector<double>& w) {
        for (std::size_t i = 0; i < w.size(); ++i) {
          m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
          v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
          const double mhat = m[i] / bc1;
          const double vhat = v[i] / bc2;
          w[i] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * w[i]);
        }
      });
    }
  }

  void zero_grad() {
    for (ad::Tensor& p : params_) p.zero_grad();
  }

 private:
  std::vector<ad::Tensor> params_;
  double lr_;
  double weight_decay_;
  double beta1_;
  double beta2_;
  double eps_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace corella
