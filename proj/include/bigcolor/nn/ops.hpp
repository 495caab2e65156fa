#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "bigcolor/nn/param.hpp"

namespace bigcolor::nn {

template <typename T>
class ReLU {
 public:
  Tensor<T> forward(const Tensor<T>& x) {
    mask_.assign(x.size(), 0);
    Tensor<T> y = Tensor<T>::like(x);
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i] > T(0)) {
        y[i] = x[i];
        mask_[i] = 1;
      } else if (std::isnan(x[i])) {
        y[i] = x[i];  // propagate so the non-finite loss check sees it
      }
    }
    return y;
  }
  Tensor<T> backward(const Tensor<T>& dy) const {
    Tensor<T> dx = Tensor<T>::like(dy);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = mask_[i] ? dy[i] : T(0);
    return dx;
  }

 private:
  std::vector<unsigned char> mask_;
};

template <typename T>
class Tanh {
 public:
  Tensor<T> forward(const Tensor<T>& x) {
    out_ = Tensor<T>::like(x);
    for (std::size_t i = 0; i < x.size(); ++i) out_[i] = std::tanh(x[i]);
    return out_;
  }
  Tensor<T> backward(const Tensor<T>& dy) const {
    Tensor<T> dx = Tensor<T>::like(dy);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = dy[i] * (T(1) - out_[i] * out_[i]);
    return dx;
  }

 private:
  Tensor<T> out_;
};

/// 2x2 average pooling with stride 2.
template <typename T>
Tensor<T> avg_pool2(const Tensor<T>& x) {
  if (x.h() % 2 || x.w() % 2)
    throw std::invalid_argument("avg_pool2: spatial size must be even, got " + x.shape_string());
  Tensor<T> y(x.n(), x.c(), x.h() / 2, x.w() / 2);
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c)
      for (int i = 0; i < y.h(); ++i)
        for (int j = 0; j < y.w(); ++j)
          y.at(n, c, i, j) = T(0.25) * (x.at(n, c, 2 * i, 2 * j) + x.at(n, c, 2 * i, 2 * j + 1) +
                                        x.at(n, c, 2 * i + 1, 2 * j) + x.at(n, c, 2 * i + 1, 2 * j + 1));
  return y;
}

template <typename T>
Tensor<T> avg_pool2_backward(const Tensor<T>& dy) {
  Tensor<T> dx(dy.n(), dy.c(), dy.h() * 2, dy.w() * 2);
  for (int n = 0; n < dy.n(); ++n)
    for (int c = 0; c < dy.c(); ++c)
      for (int i = 0; i < dx.h(); ++i)
        for (int j = 0; j < dx.w(); ++j) dx.at(n, c, i, j) = T(0.25) * dy.at(n, c, i / 2, j / 2);
  return dx;
}

/// Nearest-neighbour x2 upsampling.
template <typename T>
Tensor<T> upsample2(const Tensor<T>& x) {
  Tensor<T> y(x.n(), x.c(), x.h() * 2, x.w() * 2);
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c)
      for (int i = 0; i < y.h(); ++i)
        for (int j = 0; j < y.w(); ++j) y.at(n, c, i, j) = x.at(n, c, i / 2, j / 2);
  return y;
}

template <typename T>
Tensor<T> upsample2_backward(const Tensor<T>& dy) {
  Tensor<T> dx(dy.n(), dy.c(), dy.h() / 2, dy.w() / 2);
  for (int n = 0; n < dy.n(); ++n)
    for (int c = 0; c < dy.c(); ++c)
      for (int i = 0; i < dy.h(); ++i)
        for (int j = 0; j < dy.w(); ++j) dx.at(n, c, i / 2, j / 2) += dy.at(n, c, i, j);
  return dx;
}

/// 2x2 max pooling with stride 2.
template <typename T>
class MaxPool2 {
 public:
  Tensor<T> forward(const Tensor<T>& x) {
    if (x.h() % 2 || x.w() % 2)
      throw std::invalid_argument("max_pool2: spatial size must be even, got " + x.shape_string());
    in_shape_ = x.shape();
    Tensor<T> y(x.n(), x.c(), x.h() / 2, x.w() / 2);
    argmax_.assign(y.size(), 0);
    std::size_t k = 0;
    for (int n = 0; n < x.n(); ++n)
      for (int c = 0; c < x.c(); ++c)
        for (int i = 0; i < y.h(); ++i)
          for (int j = 0; j < y.w(); ++j, ++k) {
            std::size_t best = x.offset(n, c, 2 * i, 2 * j);
            for (int di = 0; di < 2; ++di)
              for (int dj = 0; dj < 2; ++dj) {
                const std::size_t o = x.offset(n, c, 2 * i + di, 2 * j + dj);
                if (x[o] > x[best] || std::isnan(x[o])) best = o;
              }
            argmax_[k] = best;
            y[k] = x[best];
          }
    return y;
  }
  Tensor<T> backward(const Tensor<T>& dy) const {
    Tensor<T> dx(in_shape_);
    for (std::size_t k = 0; k < dy.size(); ++k) dx[argmax_[k]] += dy[k];
    return dx;
  }

 private:
  std::array<int, 4> in_shape_{};
  std::vector<std::size_t> argmax_;
};

/// Inverted dropout; identity outside training mode.
template <typename T>
class Dropout {
 public:
  explicit Dropout(double rate = 0.0) : rate_(rate) {
    if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("Dropout: rate must be in [0, 1)");
  }
  Tensor<T> forward(const Tensor<T>& x, const Mode& mode) {
    active_ = mode.training && rate_ > 0.0;
    if (!active_) return x;
    if (!mode.rng) throw std::invalid_argument("Dropout: training mode needs an RNG");
    const T scale = static_cast<T>(1.0 / (1.0 - rate_));
    mask_ = Tensor<T>::like(x);
    Tensor<T> y = Tensor<T>::like(x);
    for (std::size_t i = 0; i < x.size(); ++i) {
      mask_[i] = mode.rng->uniform() >= rate_ ? scale : T(0);
      y[i] = x[i] * mask_[i];
    }
    return y;
  }
  Tensor<T> backward(const Tensor<T>& dy) const {
    if (!active_) return dy;
    Tensor<T> dx = Tensor<T>::like(dy);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = dy[i] * mask_[i];
    return dx;
  }
  double rate() const { return rate_; }

 private:
  double rate_ = 0.0;
  bool active_ = false;
  Tensor<T> mask_;
};

/// Sum over H and W: (N, C, H, W) -> (N, C, 1, 1).
template <typename T>
Tensor<T> global_sum_pool(const Tensor<T>& x) {
  Tensor<T> y(x.n(), x.c(), 1, 1);
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c) {
      T s = 0;
      const T* p = x.channel(n, c);
      for (std::size_t i = 0; i < x.plane(); ++i) s += p[i];
      y.at(n, c, 0, 0) = s;
    }
  return y;
}

template <typename T>
Tensor<T> global_sum_pool_backward(const Tensor<T>& dy, int h, int w) {
  Tensor<T> dx(dy.n(), dy.c(), h, w);
  for (int n = 0; n < dy.n(); ++n)
    for (int c = 0; c < dy.c(); ++c) std::fill(dx.channel(n, c), dx.channel(n, c) + dx.plane(), dy.at(n, c, 0, 0));
  return dx;
}

}  // namespace bigcolor::nn
