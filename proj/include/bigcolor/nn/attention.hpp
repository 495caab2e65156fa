#pragma once

#include <Eigen/Dense>
#include <string>

#include "bigcolor/nn/conv.hpp"
#include "bigcolor/nn/ops.hpp"

namespace bigcolor::nn {

/// Non-local self-attention block in the BigGAN layout: keys and values are
/// max-pooled by 2, output is added back through a learned scalar gain that
/// starts at zero.
template <typename T>
class SelfAttention {
 public:
  using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Map = Eigen::Map<Matrix>;
  using ConstMap = Eigen::Map<const Matrix>;

  SelfAttention() = default;
  SelfAttention(int channels, bool spectral, Rng& rng) : channels_(channels) {
    if (channels < 8) throw std::invalid_argument("SelfAttention: needs at least 8 channels");
    const int c8 = channels / 8, c2 = channels / 2;
    theta_ = Conv2d<T>({channels, c8, 1, false, spectral}, rng);
    phi_ = Conv2d<T>({channels, c8, 1, false, spectral}, rng);
    g_ = Conv2d<T>({channels, c2, 1, false, spectral}, rng);
    o_ = Conv2d<T>({c2, channels, 1, false, spectral}, rng);
    gamma_ = Param<T>(Tensor<T>(1, 1, 1, 1, T(0)));
  }

  Tensor<T> forward(const Tensor<T>& x, const Mode& mode) {
    const int N = x.n(), hw = x.h() * x.w(), hw4 = hw / 4;
    const int c8 = channels_ / 8, c2 = channels_ / 2;
    theta_out_ = theta_.forward(x, mode);
    phi_out_ = phi_pool_.forward(phi_.forward(x, mode));
    g_out_ = g_pool_.forward(g_.forward(x, mode));
    beta_.assign(N, Matrix());
    Tensor<T> attended(N, c2, x.h(), x.w());
    for (int n = 0; n < N; ++n) {
      ConstMap th(theta_out_.item(n), c8, hw);
      ConstMap ph(phi_out_.item(n), c8, hw4);
      ConstMap gv(g_out_.item(n), c2, hw4);
      Matrix s = th.transpose() * ph;  // hw x hw4
      for (int r = 0; r < hw; ++r) {
        const T mx = s.row(r).maxCoeff();
        s.row(r) = (s.row(r).array() - mx).exp();
        s.row(r) /= s.row(r).sum();
      }
      Map(attended.item(n), c2, hw).noalias() = gv * s.transpose();
      beta_[n] = std::move(s);
    }
    o_out_ = o_.forward(attended, mode);
    Tensor<T> y = x;
    const T gamma = gamma_.value[0];
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += gamma * o_out_[i];
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    const int N = dy.n(), hw = dy.h() * dy.w(), hw4 = hw / 4;
    const int c8 = channels_ / 8, c2 = channels_ / 2;
    const T gamma = gamma_.value[0];
    T dgamma = 0;
    Tensor<T> do_out = Tensor<T>::like(dy);
    for (std::size_t i = 0; i < dy.size(); ++i) {
      dgamma += dy[i] * o_out_[i];
      do_out[i] = gamma * dy[i];
    }
    gamma_.grad[0] += dgamma;
    Tensor<T> d_att = o_.backward(do_out);
    Tensor<T> d_theta = Tensor<T>::like(theta_out_), d_phi = Tensor<T>::like(phi_out_),
              d_g = Tensor<T>::like(g_out_);
    for (int n = 0; n < N; ++n) {
      ConstMap da(d_att.item(n), c2, hw);
      ConstMap gv(g_out_.item(n), c2, hw4);
      ConstMap th(theta_out_.item(n), c8, hw);
      ConstMap ph(phi_out_.item(n), c8, hw4);
      const Matrix& beta = beta_[n];
      Map(d_g.item(n), c2, hw4).noalias() = da * beta;
      Matrix dbeta = da.transpose() * gv;  // hw x hw4
      Matrix ds = beta.array() * (dbeta.array().colwise() - (dbeta.array() * beta.array()).rowwise().sum());
      Map(d_theta.item(n), c8, hw).noalias() = ph * ds.transpose();
      Map(d_phi.item(n), c8, hw4).noalias() = th * ds;
    }
    Tensor<T> dx = dy;
    dx += theta_.backward(d_theta);
    dx += phi_.backward(phi_pool_.backward(d_phi));
    dx += g_.backward(g_pool_.backward(d_g));
    return dx;
  }

  void params(ParamRefs<T>& out, const std::string& prefix) {
    theta_.params(out, join(prefix, "theta"));
    phi_.params(out, join(prefix, "phi"));
    g_.params(out, join(prefix, "g"));
    o_.params(out, join(prefix, "o"));
    out.emplace_back(join(prefix, "gamma"), &gamma_);
  }
  void buffers(BufferRefs<T>& out, const std::string& prefix) {
    theta_.buffers(out, join(prefix, "theta"));
    phi_.buffers(out, join(prefix, "phi"));
    g_.buffers(out, join(prefix, "g"));
    o_.buffers(out, join(prefix, "o"));
  }

  Param<T>& gamma() { return gamma_; }

 private:
  int channels_ = 0;
  Conv2d<T> theta_, phi_, g_, o_;
  MaxPool2<T> phi_pool_, g_pool_;
  Param<T> gamma_;
  Tensor<T> theta_out_, phi_out_, g_out_, o_out_;
  std::vector<Matrix> beta_;
};

}  // namespace bigcolor::nn
