#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "bigcolor/nn/param.hpp"

namespace bigcolor::optim {

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.0;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam over a fixed, ordered parameter list.
template <typename T>
class Adam {
 public:
  Adam() = default;
  Adam(nn::ParamRefs<T> params, AdamOptions opt) : params_(std::move(params)), opt_(opt) {
    for (auto& [name, p] : params_) {
      m_.push_back(Tensor<T>::like(p->value));
      v_.push_back(Tensor<T>::like(p->value));
    }
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = *params_[k].second;
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = p.grad[i];
        const double mi = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * g;
        const double vi = opt_.beta2 * v[i] + (1.0 - opt_.beta2) * g * g;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        p.value[i] -= static_cast<T>(opt_.lr * (mi / bc1) / (std::sqrt(vi / bc2) + opt_.eps));
      }
    }
  }

  void zero_grad() { nn::zero_grads(params_); }

  double lr() const { return opt_.lr; }
  void set_lr(double lr) { opt_.lr = lr; }
  long long steps() const { return t_; }
  void set_steps(long long t) { t_ = t; }
  const nn::ParamRefs<T>& params() const { return params_; }
  std::vector<Tensor<T>>& first_moments() { return m_; }
  std::vector<Tensor<T>>& second_moments() { return v_; }

 private:
  nn::ParamRefs<T> params_;
  AdamOptions opt_;
  std::vector<Tensor<T>> m_, v_;
  long long t_ = 0;
};

/// shadow <- beta * shadow + (1 - beta) * live, elementwise.
template <typename T>
void ema_update(Tensor<T>& shadow, const Tensor<T>& live, double beta) {
  Tensor<T>::require_same_shape(shadow, live, "ema_update");
  for (std::size_t i = 0; i < shadow.size(); ++i)
    shadow[i] = static_cast<T>(beta * shadow[i] + (1.0 - beta) * live[i]);
}

}  // namespace bigcolor::optim
