#pragma once

#include <Eigen/Dense>
#include <memory>
#include <string>
#include <vector>

#include "bigcolor/config.hpp"
#include "bigcolor/nn/conv.hpp"
#include "bigcolor/nn/ops.hpp"

namespace bigcolor {

/// BigGAN discriminator ResBlock (always downsamples by 2):
///   main:     [ReLU] -> conv3x3 -> ReLU -> conv3x3 -> avgpool
///   shortcut: conv1x1 -> avgpool   (first block: avgpool -> conv1x1)
template <typename T>
class DiscriminatorBlock {
 public:
  DiscriminatorBlock(int in, int out, bool first, bool spectral, Rng& rng)
      : first_(first),
        conv1_({in, out, 3, true, spectral}, rng),
        conv2_({out, out, 3, true, spectral}, rng),
        shortcut_({in, out, 1, true, spectral}, rng) {}

  Tensor<T> forward(const Tensor<T>& x, const nn::Mode& mode) {
    Tensor<T> h = first_ ? x : relu0_.forward(x);
    h = relu1_.forward(conv1_.forward(h, mode));
    h = nn::avg_pool2(conv2_.forward(h, mode));
    Tensor<T> s = first_ ? shortcut_.forward(nn::avg_pool2(x), mode) : nn::avg_pool2(shortcut_.forward(x, mode));
    h += s;
    return h;
  }

  Tensor<T> backward(const Tensor<T>& dout) {
    Tensor<T> dx = first_ ? nn::avg_pool2_backward(shortcut_.backward(dout))
                          : shortcut_.backward(nn::avg_pool2_backward(dout));
    Tensor<T> dh = conv2_.backward(nn::avg_pool2_backward(dout));
    dh = conv1_.backward(relu1_.backward(dh));
    if (!first_) dh = relu0_.backward(dh);
    dx += dh;
    return dx;
  }

  void params(nn::ParamRefs<T>& out, const std::string& p) {
    conv1_.params(out, nn::join(p, "conv1"));
    conv2_.params(out, nn::join(p, "conv2"));
    shortcut_.params(out, nn::join(p, "shortcut"));
  }
  void buffers(nn::BufferRefs<T>& out, const std::string& p) {
    conv1_.buffers(out, nn::join(p, "conv1"));
    conv2_.buffers(out, nn::join(p, "conv2"));
    shortcut_.buffers(out, nn::join(p, "shortcut"));
  }

 private:
  bool first_;
  nn::ReLU<T> relu0_, relu1_;
  nn::Conv2d<T> conv1_, conv2_, shortcut_;
};

/// Projection discriminator: score = w . phi(x) + b + <embed(v), phi(x)>,
/// with phi(x) the globally sum-pooled features and v the class vector.
template <typename T>
class Discriminator {
 public:
  using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  Discriminator(const DiscriminatorConfig& cfg, int num_classes, Rng& rng) : cfg_(cfg), num_classes_(num_classes) {
    int in = 3;
    for (std::size_t b = 0; b < cfg.channels.size(); ++b) {
      blocks_.push_back(std::make_unique<DiscriminatorBlock<T>>(in, cfg.channels[b], b == 0, cfg.spectral_norm, rng));
      in = cfg.channels[b];
    }
    features_ = in;
    linear_ = nn::Linear<T>(in, 1, true, cfg.spectral_norm, rng);
    embed_ = nn::Param<T>(Tensor<T>(num_classes, in, 1, 1));
    nn::init_xavier(embed_.value, rng, num_classes, in);
    if (cfg.zero_init) {
      nn::ParamRefs<T> ps;
      params(ps, "");
      for (auto& [name, p] : ps) p->value.zero();
    }
  }

  /// x: (N x 3 x H x W) in [-1, 1]; v: (N x num_classes) class vectors.
  /// Returns (N x 1 x 1 x 1) scores.
  Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& v, const nn::Mode& mode) {
    if (x.c() != 3) throw std::invalid_argument("discriminate: expected 3-channel images, got " + x.shape_string());
    if (v.n() != x.n() || static_cast<int>(v.item_size()) != num_classes_)
      throw std::invalid_argument("discriminate: class batch " + v.shape_string() + " does not match images " +
                                  x.shape_string());
    const int down = 1 << blocks_.size();
    if (x.h() % down || x.w() % down)
      throw std::invalid_argument("discriminate: image size must be a multiple of " + std::to_string(down));
    Tensor<T> h = x;
    for (auto& b : blocks_) h = b->forward(h, mode);
    feat_h_ = h.h();
    feat_w_ = h.w();
    pooled_ = nn::global_sum_pool(final_relu_.forward(h));
    class_vec_ = v;
    Tensor<T> s = linear_.forward(pooled_, mode);
    projected_ = project(v);
    for (int n = 0; n < x.n(); ++n) {
      T dot = 0;
      for (int c = 0; c < features_; ++c) dot += projected_.at(n, c, 0, 0) * pooled_.at(n, c, 0, 0);
      s[n] += dot;
    }
    return s;
  }

  /// Returns dL/dx; dL/dv is left in class_grad().
  Tensor<T> backward(const Tensor<T>& dscore) {
    const int N = dscore.n();
    Tensor<T> dpooled = linear_.backward(dscore);
    Tensor<T> dproj(N, features_, 1, 1);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < features_; ++c) {
        dpooled.at(n, c, 0, 0) += dscore[n] * projected_.at(n, c, 0, 0);
        dproj.at(n, c, 0, 0) = dscore[n] * pooled_.at(n, c, 0, 0);
      }
    Eigen::Map<const Matrix> vm(class_vec_.data(), N, num_classes_);
    Eigen::Map<const Matrix> dpm(dproj.data(), N, features_);
    Eigen::Map<Matrix> gm(embed_.grad.data(), num_classes_, features_);
    Eigen::Map<const Matrix> em(embed_.value.data(), num_classes_, features_);
    gm.noalias() += vm.transpose() * dpm;
    class_grad_ = Tensor<T>(N, num_classes_, 1, 1);
    Eigen::Map<Matrix>(class_grad_.data(), N, num_classes_).noalias() = dpm * em.transpose();

    Tensor<T> d = final_relu_.backward(nn::global_sum_pool_backward(dpooled, feat_h_, feat_w_));
    for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) d = (*it)->backward(d);
    return d;
  }

  const Tensor<T>& class_grad() const { return class_grad_; }

  void params(nn::ParamRefs<T>& out, const std::string& prefix) {
    for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i]->params(out, nn::join(prefix, "block" + std::to_string(i)));
    linear_.params(out, nn::join(prefix, "linear"));
    out.emplace_back(nn::join(prefix, "embed"), &embed_);
  }
  void buffers(nn::BufferRefs<T>& out, const std::string& prefix) {
    for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i]->buffers(out, nn::join(prefix, "block" + std::to_string(i)));
    linear_.buffers(out, nn::join(prefix, "linear"));
  }

  /// Rows of the projection embedding, one per class.
  nn::Param<T>& embedding() { return embed_; }
  int feature_dim() const { return features_; }
  const Tensor<T>& pooled_features() const { return pooled_; }

 private:
  Tensor<T> project(const Tensor<T>& v) const {
    Tensor<T> out(v.n(), features_, 1, 1);
    Eigen::Map<const Matrix> vm(v.data(), v.n(), num_classes_);
    Eigen::Map<const Matrix> em(embed_.value.data(), num_classes_, features_);
    Eigen::Map<Matrix>(out.data(), v.n(), features_).noalias() = vm * em;
    return out;
  }

  DiscriminatorConfig cfg_;
  int num_classes_;
  int features_ = 0;
  std::vector<std::unique_ptr<DiscriminatorBlock<T>>> blocks_;
  nn::ReLU<T> final_relu_;
  nn::Linear<T> linear_;
  nn::Param<T> embed_;
  Tensor<T> pooled_, projected_, class_vec_, class_grad_;
  int feat_h_ = 0, feat_w_ = 0;
};

}  // namespace bigcolor
