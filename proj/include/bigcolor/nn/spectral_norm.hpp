#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "bigcolor/nn/param.hpp"

namespace bigcolor::nn {

/// Spectral normalization of a weight viewed as a (rows x cols) matrix, with
/// one power iteration per training forward. The gradient treats the
/// singular vectors as constants.
template <typename T>
class SpectralNorm {
 public:
  using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

  SpectralNorm() = default;
  SpectralNorm(int rows, int cols, Rng& rng) : rows_(rows), cols_(cols), u_(1, rows, 1, 1) {
    init_normal(u_, rng, 1.0);
    normalize(u_.data(), rows_);
  }

  /// Returns W / sigma into `effective`.
  void apply(const Tensor<T>& weight, Tensor<T>& effective, const Mode& mode) {
    Eigen::Map<const Matrix> w(weight.data(), rows_, cols_);
    Eigen::Map<Vector> u_stored(u_.data(), rows_);
    Vector v = w.transpose() * u_stored;
    safe_normalize(v);
    Vector u = w * v;
    safe_normalize(u);
    sigma_ = u.dot(w * v);
    u_vec_ = u;
    v_vec_ = v;
    if (mode.training && mode.update_buffers) u_stored = u;
    effective = weight;
    if (sigma_ > T(1e-12)) effective *= T(1) / sigma_;
  }

  /// Map dL/dW_eff to dL/dW and accumulate into `grad`.
  void backward(const Tensor<T>& grad_effective, const Tensor<T>& effective, Tensor<T>& grad) const {
    if (!(sigma_ > T(1e-12))) {
      grad += grad_effective;
      return;
    }
    Eigen::Map<const Matrix> g(grad_effective.data(), rows_, cols_);
    Eigen::Map<const Matrix> we(effective.data(), rows_, cols_);
    Eigen::Map<Matrix> out(grad.data(), rows_, cols_);
    const T inner = (g.array() * we.array()).sum();
    out += (g - inner * u_vec_ * v_vec_.transpose()) / sigma_;
  }

  Tensor<T>& u() { return u_; }
  T sigma() const { return sigma_; }

 private:
  static void normalize(T* p, int n) {
    Eigen::Map<Vector> v(p, n);
    const T norm = v.norm();
    if (norm > T(0)) v /= norm;
  }
  static void safe_normalize(Vector& v) {
    const T norm = v.norm();
    if (norm > T(1e-12)) v /= norm;
  }

  int rows_ = 0;
  int cols_ = 0;
  Tensor<T> u_;
  T sigma_ = T(1);
  Vector u_vec_, v_vec_;
};

}  // namespace bigcolor::nn
