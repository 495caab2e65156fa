#pragma once

#include <memory>
#include <string>
#include <vector>

#include "bigcolor/config.hpp"
#include "bigcolor/nn/conv.hpp"
#include "bigcolor/nn/norm.hpp"
#include "bigcolor/nn/ops.hpp"

namespace bigcolor {

/// Residual block of the encoder, an inversion of the BigGAN generator block:
///   main:     norm(c) -> ReLU -> conv3x3 -> norm(c) -> ReLU -> conv3x3 [-> avgpool]
///   shortcut: [conv1x1 when widths differ] [-> avgpool]
/// followed by optional dropout.
template <typename T>
class EncoderBlock {
 public:
  struct Options {
    int in_channels, out_channels;
    bool pool, dropout;
    double dropout_rate;
    nn::NormKind norm;
    bool residual;
    int cond_dim;
  };

  EncoderBlock(const Options& o, Rng& rng)
      : opt_(o),
        norm1_(o.norm, o.in_channels, o.cond_dim, rng),
        conv1_({o.in_channels, o.out_channels, 3, true, false}, rng),
        norm2_(o.norm, o.out_channels, o.cond_dim, rng),
        conv2_({o.out_channels, o.out_channels, 3, true, false}, rng),
        dropout_(o.dropout ? o.dropout_rate : 0.0) {
    if (o.residual && o.in_channels != o.out_channels)
      shortcut_ = nn::Conv2d<T>({o.in_channels, o.out_channels, 1, true, false}, rng);
  }

  Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& c, const nn::Mode& mode) {
    Tensor<T> h = relu1_.forward(norm1_.forward(x, c, mode));
    h = conv1_.forward(h, mode);
    h = relu2_.forward(norm2_.forward(h, c, mode));
    h = conv2_.forward(h, mode);
    if (opt_.pool) h = nn::avg_pool2(h);
    if (opt_.residual) {
      Tensor<T> s = has_shortcut_conv() ? shortcut_.forward(x, mode) : x;
      if (opt_.pool) s = nn::avg_pool2(s);
      h += s;
    }
    return dropout_.forward(h, mode);
  }

  /// Returns dL/dx and accumulates dL/dc into `dc`.
  Tensor<T> backward(const Tensor<T>& dout, Tensor<T>& dc) {
    Tensor<T> d = dropout_.backward(dout);
    Tensor<T> dx;
    if (opt_.residual) {
      Tensor<T> ds = opt_.pool ? nn::avg_pool2_backward(d) : d;
      dx = has_shortcut_conv() ? shortcut_.backward(ds) : ds;
    }
    Tensor<T> dh = opt_.pool ? nn::avg_pool2_backward(d) : d;
    dh = conv2_.backward(dh);
    dh = norm2_.backward(relu2_.backward(dh));
    accumulate_cond(norm2_, dc);
    dh = conv1_.backward(dh);
    dh = norm1_.backward(relu1_.backward(dh));
    accumulate_cond(norm1_, dc);
    if (dx.empty()) return dh;
    dx += dh;
    return dx;
  }

  void params(nn::ParamRefs<T>& out, const std::string& p) {
    norm1_.params(out, nn::join(p, "norm1"));
    conv1_.params(out, nn::join(p, "conv1"));
    norm2_.params(out, nn::join(p, "norm2"));
    conv2_.params(out, nn::join(p, "conv2"));
    if (has_shortcut_conv()) shortcut_.params(out, nn::join(p, "shortcut"));
  }
  void buffers(nn::BufferRefs<T>& out, const std::string& p) {
    norm1_.buffers(out, nn::join(p, "norm1"));
    norm2_.buffers(out, nn::join(p, "norm2"));
  }

  const Options& options() const { return opt_; }

 private:
  bool has_shortcut_conv() const { return opt_.residual && opt_.in_channels != opt_.out_channels; }
  static void accumulate_cond(const nn::Norm2d<T>& norm, Tensor<T>& dc) {
    if (norm.kind() != nn::NormKind::Conditional) return;
    if (dc.empty()) dc = norm.cond_grad();
    else dc += norm.cond_grad();
  }

  Options opt_;
  nn::Norm2d<T> norm1_;
  nn::ReLU<T> relu1_;
  nn::Conv2d<T> conv1_;
  nn::Norm2d<T> norm2_;
  nn::ReLU<T> relu2_;
  nn::Conv2d<T> conv2_;
  nn::Conv2d<T> shortcut_;
  nn::Dropout<T> dropout_;
};

/// Grayscale image (N x 1 x H x W, network range) + class code -> spatial
/// feature (N x C_f x H/k x W/k), k = downsample_factor.
template <typename T>
class Encoder {
 public:
  Encoder(const EncoderConfig& cfg, int class_dim, Rng& rng) : cfg_(cfg), class_dim_(class_dim) {
    const auto norm = nn::parse_norm_kind(cfg.norm);
    const int blocks = cfg.block_count();
    const int pools = cfg.pooling_blocks();
    int in = 1;
    for (int b = 0; b < blocks; ++b) {
      typename EncoderBlock<T>::Options o{};
      o.in_channels = in;
      o.out_channels = cfg.channels[b];
      o.pool = b >= 1 && b <= pools;
      o.dropout = cfg.dropout_in_last_block || b + 1 < blocks;
      o.dropout_rate = cfg.dropout_rate;
      o.norm = norm;
      o.residual = cfg.use_residual;
      o.cond_dim = class_dim;
      blocks_.push_back(std::make_unique<EncoderBlock<T>>(o, rng));
      in = cfg.channels[b];
    }
  }

  Tensor<T> forward(const Tensor<T>& gray, const Tensor<T>& c, const nn::Mode& mode) {
    if (gray.c() != 1) throw std::invalid_argument("encode: expected 1-channel input, got " + gray.shape_string());
    const int k = cfg_.downsample_factor;
    if (gray.h() % k || gray.w() % k || gray.h() == 0 || gray.w() == 0)
      throw std::invalid_argument("encode: input height and width must be multiples of " + std::to_string(k) +
                                  ", got " + std::to_string(gray.h()) + "x" + std::to_string(gray.w()));
    if (c.n() != gray.n() || static_cast<int>(c.item_size()) != class_dim_)
      throw std::invalid_argument("encode: class code shape " + c.shape_string() + " does not match batch");
    Tensor<T> h = gray;
    for (auto& b : blocks_) h = b->forward(h, c, mode);
    return h;
  }

  /// Returns dL/dgray; dL/dc is accumulated into `dc`.
  Tensor<T> backward(const Tensor<T>& df, Tensor<T>& dc) {
    Tensor<T> d = df;
    for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) d = (*it)->backward(d, dc);
    return d;
  }

  void params(nn::ParamRefs<T>& out, const std::string& prefix) {
    for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i]->params(out, nn::join(prefix, "block" + std::to_string(i)));
  }
  void buffers(nn::BufferRefs<T>& out, const std::string& prefix) {
    for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i]->buffers(out, nn::join(prefix, "block" + std::to_string(i)));
  }

  const EncoderConfig& config() const { return cfg_; }
  const EncoderBlock<T>& block(int i) const { return *blocks_.at(static_cast<std::size_t>(i)); }

 private:
  EncoderConfig cfg_;
  int class_dim_;
  std::vector<std::unique_ptr<EncoderBlock<T>>> blocks_;
};

}  // namespace bigcolor
