#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "bigcolor/feature_extractor.hpp"
#include "bigcolor/tensor.hpp"

namespace bigcolor::losses {

struct LossWeights {
  double lambda_per = 0.2;
  double lambda_adv = 0.03;
};

struct LossReport {
  double mse = 0;
  double perceptual = 0;
  double gen_adv = 0;
  double disc = 0;
  double total_gen = 0;

  friend bool operator==(const LossReport&, const LossReport&) = default;
};

inline double combine(double mse, double perceptual, double gen_adv, const LossWeights& w) {
  return mse + w.lambda_per * perceptual + w.lambda_adv * gen_adv;
}

/// A scalar loss and its gradient w.r.t. the (first) input.
template <typename T>
struct Valued {
  double value = 0;
  Tensor<T> grad;
};

/// Mean squared difference over all elements.
template <typename T>
double mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  Tensor<T>::require_same_shape(pred, target, "mse_loss");
  if (pred.empty()) throw std::invalid_argument("mse_loss: empty input");
  double s = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
    s += d * d;
  }
  return s / static_cast<double>(pred.size());
}

template <typename T>
Valued<T> mse_loss_grad(const Tensor<T>& pred, const Tensor<T>& target) {
  Valued<T> out{mse_loss(pred, target), Tensor<T>::like(pred)};
  const double k = 2.0 / static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) out.grad[i] = static_cast<T>(k * (double(pred[i]) - double(target[i])));
  return out;
}

/// Sum over taps of the mean squared feature difference.
template <typename T>
Valued<T> perceptual_loss_grad(const Tensor<T>& pred, const Tensor<T>& target, FeatureExtractor<T>* extractor) {
  if (!extractor) throw std::invalid_argument("perceptual_loss: no feature extractor configured");
  Tensor<T>::require_same_shape(pred, target, "perceptual_loss");
  const auto ft = extractor->taps(target);
  const auto fp = extractor->taps(pred);  // leaves the extractor cached on pred
  Valued<T> out;
  std::vector<Tensor<T>> grads;
  for (std::size_t t = 0; t < fp.size(); ++t) {
    auto v = mse_loss_grad(fp[t], ft[t]);
    out.value += v.value;
    grads.push_back(std::move(v.grad));
  }
  out.grad = extractor->backward(grads);
  return out;
}

template <typename T>
double perceptual_loss(const Tensor<T>& pred, const Tensor<T>& target, FeatureExtractor<T>* extractor) {
  if (!extractor) throw std::invalid_argument("perceptual_loss: no feature extractor configured");
  Tensor<T>::require_same_shape(pred, target, "perceptual_loss");
  const auto ft = extractor->taps(target);
  const auto fp = extractor->taps(pred);
  double s = 0;
  for (std::size_t t = 0; t < fp.size(); ++t) s += mse_loss(fp[t], ft[t]);
  return s;
}

/// -mean(D(fake)).
template <typename T>
Valued<T> gen_adv_loss(const Tensor<T>& fake_scores) {
  if (fake_scores.empty()) throw std::invalid_argument("gen_adv_loss: empty scores");
  const double n = static_cast<double>(fake_scores.size());
  Valued<T> out{-sum(fake_scores) / n, Tensor<T>::like(fake_scores, static_cast<T>(-1.0 / n))};
  return out;
}

template <typename T>
struct HingeResult {
  double value = 0;
  Tensor<T> grad_real, grad_fake;
};

/// mean(max(0, 1 - D(real))) + mean(max(0, 1 + D(fake))).
template <typename T>
HingeResult<T> disc_hinge_loss(const Tensor<T>& real, const Tensor<T>& fake) {
  if (real.empty() || fake.empty()) throw std::invalid_argument("disc_hinge_loss: empty scores");
  HingeResult<T> out{0, Tensor<T>::like(real), Tensor<T>::like(fake)};
  const double nr = static_cast<double>(real.size()), nf = static_cast<double>(fake.size());
  double lr = 0, lf = 0;
  for (std::size_t i = 0; i < real.size(); ++i) {
    const double m = 1.0 - real[i];
    if (std::isnan(m)) lr += m;  // NaN scores must surface, not vanish in the max
    if (m > 0) {
      lr += m;
      out.grad_real[i] = static_cast<T>(-1.0 / nr);
    }
  }
  for (std::size_t i = 0; i < fake.size(); ++i) {
    const double m = 1.0 + fake[i];
    if (std::isnan(m)) lf += m;
    if (m > 0) {
      lf += m;
      out.grad_fake[i] = static_cast<T>(1.0 / nf);
    }
  }
  out.value = lr / nr + lf / nf;
  return out;
}

}  // namespace bigcolor::losses
