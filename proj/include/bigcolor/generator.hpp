#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "bigcolor/config.hpp"
#include "bigcolor/nn/attention.hpp"
#include "bigcolor/nn/conv.hpp"
#include "bigcolor/nn/norm.hpp"
#include "bigcolor/nn/ops.hpp"

namespace bigcolor {

/// BigGAN generator ResBlock conditioned on one (z-chunk, class code) vector:
///   main:     CBN -> ReLU -> [up x2] -> conv3x3 -> CBN -> ReLU -> conv3x3
///   shortcut: [up x2] -> [conv1x1 when widths differ]
template <typename T>
class GeneratorBlock {
 public:
  GeneratorBlock(int in, int out, bool upsample, int cond_dim, Rng& rng)
      : in_(in), out_(out), upsample_(upsample),
        norm1_(nn::NormKind::Conditional, in, cond_dim, rng),
        conv1_({in, out, 3, true, false}, rng),
        norm2_(nn::NormKind::Conditional, out, cond_dim, rng),
        conv2_({out, out, 3, true, false}, rng) {
    if (in != out) shortcut_ = nn::Conv2d<T>({in, out, 1, true, false}, rng);
  }

  Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& cond, const nn::Mode& mode) {
    Tensor<T> h = relu1_.forward(norm1_.forward(x, cond, mode));
    if (upsample_) h = nn::upsample2(h);
    h = conv1_.forward(h, mode);
    h = relu2_.forward(norm2_.forward(h, cond, mode));
    h = conv2_.forward(h, mode);
    Tensor<T> s = upsample_ ? nn::upsample2(x) : x;
    if (in_ != out_) s = shortcut_.forward(s, mode);
    h += s;
    return h;
  }

  /// Returns dL/dx; dL/dcond is left in cond_grad().
  Tensor<T> backward(const Tensor<T>& dout) {
    Tensor<T> ds = in_ != out_ ? shortcut_.backward(dout) : dout;
    if (upsample_) ds = nn::upsample2_backward(ds);
    Tensor<T> dh = conv2_.backward(dout);
    dh = norm2_.backward(relu2_.backward(dh));
    cond_grad_ = norm2_.cond_grad();
    dh = conv1_.backward(dh);
    if (upsample_) dh = nn::upsample2_backward(dh);
    dh = norm1_.backward(relu1_.backward(dh));
    cond_grad_ += norm1_.cond_grad();
    ds += dh;
    return ds;
  }

  const Tensor<T>& cond_grad() const { return cond_grad_; }

  void params(nn::ParamRefs<T>& out, const std::string& p) {
    norm1_.params(out, nn::join(p, "norm1"));
    conv1_.params(out, nn::join(p, "conv1"));
    norm2_.params(out, nn::join(p, "norm2"));
    conv2_.params(out, nn::join(p, "conv2"));
    if (in_ != out_) shortcut_.params(out, nn::join(p, "shortcut"));
  }
  void buffers(nn::BufferRefs<T>& out, const std::string& p) {
    norm1_.buffers(out, nn::join(p, "norm1"));
    norm2_.buffers(out, nn::join(p, "norm2"));
  }

 private:
  int in_, out_;
  bool upsample_;
  nn::Norm2d<T> norm1_;
  nn::ReLU<T> relu1_;
  nn::Conv2d<T> conv1_;
  nn::Norm2d<T> norm2_;
  nn::ReLU<T> relu2_;
  nn::Conv2d<T> conv2_;
  nn::Conv2d<T> shortcut_;
  Tensor<T> cond_grad_;
};

/// Spatial feature + condition chunks -> RGB image in [-1, 1]. Each block
/// consumes its own chunk; the last log2(k) blocks upsample by 2.
template <typename T>
class Generator {
 public:
  Generator(const GeneratorConfig& cfg, int feature_channels, int upsample_factor, int cond_dim, Rng& rng)
      : cfg_(cfg), feature_channels_(feature_channels), cond_dim_(cond_dim) {
    const int blocks = cfg.block_count();
    const int ups = std::countr_zero(static_cast<unsigned>(upsample_factor));
    if (ups > blocks) throw std::invalid_argument("generator: too few blocks for the upsampling factor");
    int in = feature_channels;
    for (int b = 0; b < blocks; ++b) {
      blocks_.push_back(std::make_unique<GeneratorBlock<T>>(in, cfg.channels[b], b >= blocks - ups, cond_dim, rng));
      in = cfg.channels[b];
    }
    if (cfg.attention_stage >= 0) attention_.emplace(cfg.channels[cfg.attention_stage], false, rng);
    final_norm_ = nn::Norm2d<T>(nn::NormKind::Plain, in, 0, rng);
    to_rgb_ = nn::Conv2d<T>({in, 3, 3, true, false}, rng);
  }

  Tensor<T> forward(const Tensor<T>& f, const std::vector<Tensor<T>>& chunks, const nn::Mode& mode) {
    if (f.c() != feature_channels_)
      throw std::invalid_argument("generate: expected " + std::to_string(feature_channels_) +
                                  "-channel feature, got " + f.shape_string());
    if (static_cast<int>(chunks.size()) != cfg_.block_count())
      throw std::invalid_argument("generate: expected " + std::to_string(cfg_.block_count()) +
                                  " condition chunks, got " + std::to_string(chunks.size()));
    for (const auto& ch : chunks)
      if (ch.n() != f.n() || static_cast<int>(ch.item_size()) != cond_dim_)
        throw std::invalid_argument("generate: condition chunk shape " + ch.shape_string() + " invalid");
    Tensor<T> h = f;
    for (int b = 0; b < cfg_.block_count(); ++b) {
      h = blocks_[b]->forward(h, chunks[b], mode);
      if (b == cfg_.attention_stage) h = attention_->forward(h, mode);
    }
    h = final_relu_.forward(final_norm_.forward(h, Tensor<T>(), mode));
    return tanh_.forward(to_rgb_.forward(h, mode));
  }

  /// Returns dL/df; per-chunk gradients are left in chunk_grads().
  Tensor<T> backward(const Tensor<T>& dimg) {
    Tensor<T> d = to_rgb_.backward(tanh_.backward(dimg));
    d = final_norm_.backward(final_relu_.backward(d));
    chunk_grads_.assign(blocks_.size(), Tensor<T>());
    for (int b = cfg_.block_count() - 1; b >= 0; --b) {
      if (b == cfg_.attention_stage) d = attention_->backward(d);
      d = blocks_[b]->backward(d);
      chunk_grads_[b] = blocks_[b]->cond_grad();
    }
    return d;
  }

  const std::vector<Tensor<T>>& chunk_grads() const { return chunk_grads_; }

  void params(nn::ParamRefs<T>& out, const std::string& prefix) {
    for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i]->params(out, nn::join(prefix, "block" + std::to_string(i)));
    if (attention_) attention_->params(out, nn::join(prefix, "attention"));
    final_norm_.params(out, nn::join(prefix, "final_norm"));
    to_rgb_.params(out, nn::join(prefix, "to_rgb"));
  }
  void buffers(nn::BufferRefs<T>& out, const std::string& prefix) {
    for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i]->buffers(out, nn::join(prefix, "block" + std::to_string(i)));
    if (attention_) attention_->buffers(out, nn::join(prefix, "attention"));
    final_norm_.buffers(out, nn::join(prefix, "final_norm"));
  }

  const GeneratorConfig& config() const { return cfg_; }
  bool has_attention() const { return attention_.has_value(); }
  nn::SelfAttention<T>* attention() { return attention_ ? &*attention_ : nullptr; }

 private:
  GeneratorConfig cfg_;
  int feature_channels_, cond_dim_;
  std::vector<std::unique_ptr<GeneratorBlock<T>>> blocks_;
  std::optional<nn::SelfAttention<T>> attention_;
  nn::Norm2d<T> final_norm_;
  nn::ReLU<T> final_relu_;
  nn::Conv2d<T> to_rgb_;
  nn::Tanh<T> tanh_;
  std::vector<Tensor<T>> chunk_grads_;
};

/// [-1, 1] network range -> [0, 1] image range.
template <typename T>
Tensor<T> to_unit_range(Tensor<T> x) {
  for (auto& v : x.vec()) v = std::clamp((v + T(1)) * T(0.5), T(0), T(1));
  return x;
}

/// [0, 1] image range -> [-1, 1] network range.
template <typename T>
Tensor<T> to_network_range(Tensor<T> x) {
  for (auto& v : x.vec()) v = v * T(2) - T(1);
  return x;
}

}  // namespace bigcolor
