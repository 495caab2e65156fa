#pragma once

#include <Eigen/Dense>
#include <optional>
#include <stdexcept>
#include <string>

#include "bigcolor/nn/param.hpp"
#include "bigcolor/nn/spectral_norm.hpp"

namespace bigcolor::nn {

struct ConvOptions {
  int in_channels = 1;
  int out_channels = 1;
  int kernel = 3;  // odd; "same" zero padding
  bool bias = true;
  bool spectral = false;
};

/// 2-D convolution, stride 1, same padding, via im2col + GEMM.
template <typename T>
class Conv2d {
 public:
  using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<Matrix>;
  using ConstMatrixMap = Eigen::Map<const Matrix>;

  Conv2d() = default;
  Conv2d(const ConvOptions& opt, Rng& rng) : opt_(opt) {
    if (opt.kernel < 1 || opt.kernel % 2 == 0) throw std::invalid_argument("Conv2d: kernel must be odd");
    weight_ = Param<T>(Tensor<T>(opt.out_channels, opt.in_channels, opt.kernel, opt.kernel));
    const int k2 = opt.kernel * opt.kernel;
    init_xavier(weight_.value, rng, opt.in_channels * k2, opt.out_channels * k2);
    if (opt.bias) bias_ = Param<T>(Tensor<T>(1, opt.out_channels, 1, 1));
    if (opt.spectral) sn_.emplace(opt.out_channels, opt.in_channels * k2, rng);
  }

  Tensor<T> forward(const Tensor<T>& x, const Mode& mode) {
    if (x.c() != opt_.in_channels)
      throw std::invalid_argument("Conv2d: expected " + std::to_string(opt_.in_channels) +
                                  " input channels, got " + x.shape_string());
    input_ = x;
    const Tensor<T>& w = effective_weight(mode);
    const int hw = x.h() * x.w();
    const int kdim = patch_size();
    Tensor<T> y(x.n(), opt_.out_channels, x.h(), x.w());
    ConstMatrixMap wm(w.data(), opt_.out_channels, kdim);
    for (int n = 0; n < x.n(); ++n) {
      MatrixMap ym(y.item(n), opt_.out_channels, hw);
      ym.noalias() = wm * columns(x, n);
      if (opt_.bias)
        for (int c = 0; c < opt_.out_channels; ++c) ym.row(c).array() += bias_.value[c];
    }
    return y;
  }

  /// Accumulates parameter gradients; returns dL/dx.
  Tensor<T> backward(const Tensor<T>& dy) {
    const Tensor<T>& x = input_;
    const int hw = x.h() * x.w();
    const int kdim = patch_size();
    Tensor<T> dx = Tensor<T>::like(x);
    Tensor<T> dw_eff(weight_.value.shape());
    MatrixMap dwm(dw_eff.data(), opt_.out_channels, kdim);
    ConstMatrixMap wm(effective_.data(), opt_.out_channels, kdim);
    Matrix dcols;
    for (int n = 0; n < x.n(); ++n) {
      ConstMatrixMap dym(dy.item(n), opt_.out_channels, hw);
      if (opt_.kernel == 1) {
        ConstMatrixMap cols(x.item(n), opt_.in_channels, hw);
        dwm.noalias() += dym * cols.transpose();
        MatrixMap dxm(dx.item(n), opt_.in_channels, hw);
        dxm.noalias() = wm.transpose() * dym;
      } else {
        im2col(x, n, cols_);
        dwm.noalias() += dym * cols_.transpose();
        dcols.noalias() = wm.transpose() * dym;
        col2im(dcols, dx, n);
      }
      if (opt_.bias)
        for (int c = 0; c < opt_.out_channels; ++c) bias_.grad[c] += dym.row(c).sum();
    }
    if (sn_) sn_->backward(dw_eff, effective_, weight_.grad);
    else weight_.grad += dw_eff;
    return dx;
  }

  void params(ParamRefs<T>& out, const std::string& prefix) {
    out.emplace_back(join(prefix, "weight"), &weight_);
    if (opt_.bias) out.emplace_back(join(prefix, "bias"), &bias_);
  }
  void buffers(BufferRefs<T>& out, const std::string& prefix) {
    if (sn_) out.emplace_back(join(prefix, "sn_u"), &sn_->u());
  }

  Param<T>& weight() { return weight_; }
  Param<T>& bias() { return bias_; }
  const ConvOptions& options() const { return opt_; }

 private:
  int patch_size() const { return opt_.in_channels * opt_.kernel * opt_.kernel; }

  const Tensor<T>& effective_weight(const Mode& mode) {
    if (sn_) sn_->apply(weight_.value, effective_, mode);
    else effective_ = weight_.value;
    return effective_;
  }

  // Column matrix for item n; for 1x1 kernels the input itself.
  ConstMatrixMap columns(const Tensor<T>& x, int n) {
    const int hw = x.h() * x.w();
    if (opt_.kernel == 1) return ConstMatrixMap(x.item(n), opt_.in_channels, hw);
    im2col(x, n, cols_);
    return ConstMatrixMap(cols_.data(), cols_.rows(), cols_.cols());
  }

  void im2col(const Tensor<T>& x, int n, Matrix& cols) const {
    const int k = opt_.kernel, pad = k / 2, H = x.h(), W = x.w();
    cols.resize(patch_size(), H * W);
    for (int c = 0; c < opt_.in_channels; ++c) {
      const T* src = x.channel(n, c);
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          T* dst = cols.data() + static_cast<std::size_t>((c * k + ky) * k + kx) * H * W;
          for (int y = 0; y < H; ++y) {
            const int sy = y + ky - pad;
            T* row = dst + static_cast<std::size_t>(y) * W;
            if (sy < 0 || sy >= H) {
              std::fill(row, row + W, T(0));
              continue;
            }
            const T* srow = src + static_cast<std::size_t>(sy) * W;
            for (int xx = 0; xx < W; ++xx) {
              const int sx = xx + kx - pad;
              row[xx] = (sx < 0 || sx >= W) ? T(0) : srow[sx];
            }
          }
        }
    }
  }

  void col2im(const Matrix& cols, Tensor<T>& dx, int n) const {
    const int k = opt_.kernel, pad = k / 2, H = dx.h(), W = dx.w();
    for (int c = 0; c < opt_.in_channels; ++c) {
      T* dst = dx.channel(n, c);
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const T* src = cols.data() + static_cast<std::size_t>((c * k + ky) * k + kx) * H * W;
          for (int y = 0; y < H; ++y) {
            const int sy = y + ky - pad;
            if (sy < 0 || sy >= H) continue;
            const T* row = src + static_cast<std::size_t>(y) * W;
            T* drow = dst + static_cast<std::size_t>(sy) * W;
            const int x0 = std::max(0, pad - kx), x1 = std::min(W, W + pad - kx);
            for (int xx = x0; xx < x1; ++xx) drow[xx + kx - pad] += row[xx];
          }
        }
    }
  }

  ConvOptions opt_;
  Param<T> weight_;
  Param<T> bias_;
  std::optional<SpectralNorm<T>> sn_;
  Tensor<T> effective_;
  Tensor<T> input_;
  Matrix cols_;
};

/// Fully connected layer on (N x in x 1 x 1) tensors.
template <typename T>
class Linear {
 public:
  using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  Linear() = default;
  Linear(int in, int out, bool bias, bool spectral, Rng& rng) : in_(in), out_(out), has_bias_(bias) {
    weight_ = Param<T>(Tensor<T>(out, in, 1, 1));
    init_xavier(weight_.value, rng, in, out);
    if (bias) bias_ = Param<T>(Tensor<T>(1, out, 1, 1));
    if (spectral) sn_.emplace(out, in, rng);
  }

  Tensor<T> forward(const Tensor<T>& x, const Mode& mode) {
    if (static_cast<int>(x.item_size()) != in_)
      throw std::invalid_argument("Linear: expected " + std::to_string(in_) + " features, got " +
                                  x.shape_string());
    input_ = x;
    if (sn_) sn_->apply(weight_.value, effective_, mode);
    else effective_ = weight_.value;
    Tensor<T> y(x.n(), out_, 1, 1);
    Eigen::Map<const Matrix> xm(x.data(), x.n(), in_);
    Eigen::Map<const Matrix> wm(effective_.data(), out_, in_);
    Eigen::Map<Matrix> ym(y.data(), x.n(), out_);
    ym.noalias() = xm * wm.transpose();
    if (has_bias_)
      for (int i = 0; i < x.n(); ++i)
        for (int o = 0; o < out_; ++o) ym(i, o) += bias_.value[o];
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    Eigen::Map<const Matrix> xm(input_.data(), input_.n(), in_);
    Eigen::Map<const Matrix> dym(dy.data(), input_.n(), out_);
    Eigen::Map<const Matrix> wm(effective_.data(), out_, in_);
    Tensor<T> dw(weight_.value.shape());
    Eigen::Map<Matrix> dwm(dw.data(), out_, in_);
    dwm.noalias() = dym.transpose() * xm;
    if (sn_) sn_->backward(dw, effective_, weight_.grad);
    else weight_.grad += dw;
    if (has_bias_)
      for (int o = 0; o < out_; ++o) bias_.grad[o] += dym.col(o).sum();
    Tensor<T> dx = Tensor<T>::like(input_);
    Eigen::Map<Matrix> dxm(dx.data(), input_.n(), in_);
    dxm.noalias() = dym * wm;
    return dx;
  }

  void params(ParamRefs<T>& out, const std::string& prefix) {
    out.emplace_back(join(prefix, "weight"), &weight_);
    if (has_bias_) out.emplace_back(join(prefix, "bias"), &bias_);
  }
  void buffers(BufferRefs<T>& out, const std::string& prefix) {
    if (sn_) out.emplace_back(join(prefix, "sn_u"), &sn_->u());
  }

  Param<T>& weight() { return weight_; }
  int in_features() const { return in_; }
  int out_features() const { return out_; }

 private:
  int in_ = 0, out_ = 0;
  bool has_bias_ = false;
  Param<T> weight_, bias_;
  std::optional<SpectralNorm<T>> sn_;
  Tensor<T> effective_, input_;
};

}  // namespace bigcolor::nn
