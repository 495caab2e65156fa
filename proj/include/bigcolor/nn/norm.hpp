#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include "bigcolor/nn/conv.hpp"
#include "bigcolor/nn/param.hpp"

namespace bigcolor::nn {

enum class NormKind { Conditional, Plain, None };

inline NormKind parse_norm_kind(const std::string& s) {
  if (s == "cbn") return NormKind::Conditional;
  if (s == "bn") return NormKind::Plain;
  if (s == "none") return NormKind::None;
  throw std::invalid_argument("unknown normalization '" + s + "' (expected cbn|bn|none)");
}
inline std::string to_string(NormKind k) {
  switch (k) {
    case NormKind::Conditional: return "cbn";
    case NormKind::Plain: return "bn";
    case NormKind::None: return "none";
  }
  return "none";
}

/// Batch normalization over (N, H, W) per channel.
///
/// Conditional:  y = (1 + W_gamma c) * xhat + W_beta c, per sample.
/// Plain:        y = gamma * xhat + beta with learned per-channel affine.
/// None:         identity.
///
/// Training mode normalizes with batch statistics and updates the running
/// estimates; inference mode uses the running estimates.
template <typename T>
class Norm2d {
 public:
  Norm2d() = default;
  Norm2d(NormKind kind, int channels, int cond_dim, Rng& rng, double eps = 1e-5, double momentum = 0.1)
      : kind_(kind), channels_(channels), cond_dim_(cond_dim), eps_(eps), momentum_(momentum),
        running_mean_(1, channels, 1, 1, T(0)), running_var_(1, channels, 1, 1, T(1)) {
    if (kind == NormKind::Conditional) {
      if (cond_dim <= 0) throw std::invalid_argument("Norm2d: conditional norm needs cond_dim > 0");
      gain_ = Linear<T>(cond_dim, channels, false, false, rng);
      shift_ = Linear<T>(cond_dim, channels, false, false, rng);
      init_normal(gain_.weight().value, rng, 0.02);
      init_normal(shift_.weight().value, rng, 0.02);
    } else if (kind == NormKind::Plain) {
      gamma_ = Param<T>(Tensor<T>(1, channels, 1, 1, T(1)));
      beta_ = Param<T>(Tensor<T>(1, channels, 1, 1, T(0)));
    }
  }

  /// `cond` is (N x cond_dim x 1 x 1); ignored unless conditional.
  Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& cond, const Mode& mode) {
    if (kind_ == NormKind::None) return x;
    if (x.c() != channels_)
      throw std::invalid_argument("Norm2d: expected " + std::to_string(channels_) + " channels, got " +
                                  x.shape_string());
    const int N = x.n(), C = channels_;
    const std::size_t hw = x.plane();
    const double M = static_cast<double>(N) * hw;
    training_ = mode.training;
    mean_.assign(C, 0.0);
    inv_std_.assign(C, 0.0);
    if (mode.training) {
      if (M < 2) throw std::invalid_argument("Norm2d: batch statistics need at least 2 values per channel");
      for (int c = 0; c < C; ++c) {
        double s = 0, s2 = 0;
        for (int n = 0; n < N; ++n) {
          const T* p = x.channel(n, c);
          for (std::size_t i = 0; i < hw; ++i) s += p[i];
        }
        const double mu = s / M;
        for (int n = 0; n < N; ++n) {
          const T* p = x.channel(n, c);
          for (std::size_t i = 0; i < hw; ++i) s2 += (p[i] - mu) * (p[i] - mu);
        }
        const double var = s2 / M;
        mean_[c] = mu;
        inv_std_[c] = 1.0 / std::sqrt(var + eps_);
        if (mode.update_buffers) {
          running_mean_[c] = static_cast<T>((1 - momentum_) * running_mean_[c] + momentum_ * mu);
          running_var_[c] = static_cast<T>((1 - momentum_) * running_var_[c] + momentum_ * var * M / (M - 1));
        }
      }
    } else {
      for (int c = 0; c < C; ++c) {
        mean_[c] = running_mean_[c];
        inv_std_[c] = 1.0 / std::sqrt(static_cast<double>(running_var_[c]) + eps_);
      }
    }

    scale_and_shift(cond, N, mode);
    xhat_ = Tensor<T>::like(x);
    Tensor<T> y = Tensor<T>::like(x);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const T* p = x.channel(n, c);
        T* xh = xhat_.channel(n, c);
        T* out = y.channel(n, c);
        const T mu = static_cast<T>(mean_[c]), is = static_cast<T>(inv_std_[c]);
        const T g = gamma_at(n, c), b = beta_at(n, c);
        for (std::size_t i = 0; i < hw; ++i) {
          xh[i] = (p[i] - mu) * is;
          out[i] = g * xh[i] + b;
        }
      }
    return y;
  }

  /// Returns dL/dx; dL/dcond (if conditional) is left in cond_grad().
  Tensor<T> backward(const Tensor<T>& dy) {
    if (kind_ == NormKind::None) return dy;
    const int N = dy.n(), C = channels_;
    const std::size_t hw = dy.plane();
    const double M = static_cast<double>(N) * hw;
    Tensor<T> dgamma(N, C, 1, 1), dbeta(N, C, 1, 1);
    Tensor<T> dx = Tensor<T>::like(dy);
    for (int c = 0; c < C; ++c) {
      double sum_dxh = 0, sum_dxh_xh = 0;
      for (int n = 0; n < N; ++n) {
        const T* g = dy.channel(n, c);
        const T* xh = xhat_.channel(n, c);
        const double gam = gamma_at(n, c);
        double dg = 0, db = 0;
        for (std::size_t i = 0; i < hw; ++i) {
          dg += static_cast<double>(g[i]) * xh[i];
          db += g[i];
        }
        dgamma.at(n, c, 0, 0) = static_cast<T>(dg);
        dbeta.at(n, c, 0, 0) = static_cast<T>(db);
        sum_dxh += gam * db;
        sum_dxh_xh += gam * dg;
      }
      const double is = inv_std_[c];
      for (int n = 0; n < N; ++n) {
        const T* g = dy.channel(n, c);
        const T* xh = xhat_.channel(n, c);
        T* out = dx.channel(n, c);
        const double gam = gamma_at(n, c);
        if (training_) {
          for (std::size_t i = 0; i < hw; ++i)
            out[i] = static_cast<T>(is / M * (M * gam * g[i] - sum_dxh - xh[i] * sum_dxh_xh));
        } else {
          for (std::size_t i = 0; i < hw; ++i) out[i] = static_cast<T>(gam * g[i] * is);
        }
      }
    }

    if (kind_ == NormKind::Plain) {
      for (int c = 0; c < C; ++c)
        for (int n = 0; n < N; ++n) {
          gamma_.grad[c] += dgamma.at(n, c, 0, 0);
          beta_.grad[c] += dbeta.at(n, c, 0, 0);
        }
    } else {
      cond_grad_ = gain_.backward(dgamma);
      cond_grad_ += shift_.backward(dbeta);
    }
    return dx;
  }

  const Tensor<T>& cond_grad() const { return cond_grad_; }
  NormKind kind() const { return kind_; }

  void params(ParamRefs<T>& out, const std::string& prefix) {
    if (kind_ == NormKind::Conditional) {
      gain_.params(out, join(prefix, "gain"));
      shift_.params(out, join(prefix, "shift"));
    } else if (kind_ == NormKind::Plain) {
      out.emplace_back(join(prefix, "gamma"), &gamma_);
      out.emplace_back(join(prefix, "beta"), &beta_);
    }
  }
  void buffers(BufferRefs<T>& out, const std::string& prefix) {
    if (kind_ == NormKind::None) return;
    out.emplace_back(join(prefix, "running_mean"), &running_mean_);
    out.emplace_back(join(prefix, "running_var"), &running_var_);
  }

  Tensor<T>& running_mean() { return running_mean_; }
  Tensor<T>& running_var() { return running_var_; }
  Linear<T>& gain() { return gain_; }
  Linear<T>& shift() { return shift_; }

 private:
  void scale_and_shift(const Tensor<T>& cond, int N, const Mode& mode) {
    if (kind_ != NormKind::Conditional) return;
    if (cond.n() != N || static_cast<int>(cond.item_size()) != cond_dim_)
      throw std::invalid_argument("Norm2d: condition shape " + cond.shape_string() + " does not match batch " +
                                  std::to_string(N) + " x " + std::to_string(cond_dim_));
    gamma_n_ = gain_.forward(cond, mode);
    for (auto& v : gamma_n_.vec()) v += T(1);
    beta_n_ = shift_.forward(cond, mode);
  }
  T gamma_at(int n, int c) const {
    if (kind_ == NormKind::Conditional) return gamma_n_.at(n, c, 0, 0);
    return gamma_.value[c];
  }
  T beta_at(int n, int c) const {
    if (kind_ == NormKind::Conditional) return beta_n_.at(n, c, 0, 0);
    return beta_.value[c];
  }

  NormKind kind_ = NormKind::None;
  int channels_ = 0, cond_dim_ = 0;
  double eps_ = 1e-5, momentum_ = 0.1;
  Tensor<T> running_mean_, running_var_;
  Linear<T> gain_, shift_;
  Param<T> gamma_, beta_;
  bool training_ = false;
  std::vector<double> mean_, inv_std_;
  Tensor<T> xhat_, gamma_n_, beta_n_, cond_grad_;
};

}  // namespace bigcolor::nn
