#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "bigcolor/random.hpp"
#include "bigcolor/tensor.hpp"

namespace bigcolor::nn {

/// A trainable tensor and its accumulated gradient.
template <typename T>
struct Param {
  Tensor<T> value;
  Tensor<T> grad;

  Param() = default;
  explicit Param(Tensor<T> v) : value(std::move(v)), grad(Tensor<T>::like(value)) {}
  void zero_grad() { grad.zero(); }
};

template <typename T>
using ParamRefs = std::vector<std::pair<std::string, Param<T>*>>;

/// Non-trainable state (running statistics, power-iteration vectors).
template <typename T>
using BufferRefs = std::vector<std::pair<std::string, Tensor<T>*>>;

inline std::string join(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

/// Forward-pass mode. Dropout draws from `rng` in training mode.
struct Mode {
  bool training = false;
  Rng* rng = nullptr;
  /// When false, spectral-norm power iteration does not advance (used by
  /// finite-difference checks that need repeatable forwards).
  bool update_buffers = true;

  static Mode eval() { return Mode{}; }
  static Mode train(Rng& r) { return Mode{true, &r, true}; }
};

template <typename T>
void init_normal(Tensor<T>& t, Rng& rng, double stddev) {
  for (auto& v : t.vec()) v = static_cast<T>(rng.normal() * stddev);
}

/// Xavier/Glorot uniform, the usual choice for BigGAN-style layers.
template <typename T>
void init_xavier(Tensor<T>& t, Rng& rng, int fan_in, int fan_out) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : t.vec()) v = static_cast<T>((2.0 * rng.uniform() - 1.0) * bound);
}

template <typename T>
void zero_grads(const ParamRefs<T>& params) {
  for (auto& [name, p] : params) p->zero_grad();
}

}  // namespace bigcolor::nn
