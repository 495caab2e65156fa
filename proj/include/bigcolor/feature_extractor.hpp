#pragma once

#include <algorithm>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "bigcolor/config.hpp"
#include "bigcolor/nn/conv.hpp"
#include "bigcolor/nn/ops.hpp"

namespace bigcolor {

/// Differentiable multi-tap feature extractor for perceptual losses.
/// Inputs are RGB images in network range [-1, 1].
template <typename T>
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::vector<Tensor<T>> taps(const Tensor<T>& x) = 0;
  /// Gradient w.r.t. the input of the most recent taps() call.
  virtual Tensor<T> backward(const std::vector<Tensor<T>>& tap_grads) = 0;
  virtual std::size_t tap_count() const = 0;
};

/// Every tap is the raw input.
template <typename T>
class IdentityExtractor final : public FeatureExtractor<T> {
 public:
  explicit IdentityExtractor(std::size_t taps = 4) : count_(taps) {}
  std::vector<Tensor<T>> taps(const Tensor<T>& x) override { return std::vector<Tensor<T>>(count_, x); }
  Tensor<T> backward(const std::vector<Tensor<T>>& g) override {
    Tensor<T> d = g.at(0);
    for (std::size_t i = 1; i < g.size(); ++i) d += g[i];
    return d;
  }
  std::size_t tap_count() const override { return count_; }

 private:
  std::size_t count_;
};

/// VGG16-layout convolutional stack (conv counts 2, 2, 3, 3, 3 with 2x2 max
/// pooling between stages). Taps are post-ReLU outputs of the listed conv
/// layers, counted from 1. Inputs are mapped to [0, 1] and normalized by the
/// ImageNet channel statistics before the first conv.
template <typename T>
class VggExtractor final : public FeatureExtractor<T> {
 public:
  static constexpr int kStageConvs[5] = {2, 2, 3, 3, 3};

  explicit VggExtractor(const ExtractorConfig& cfg) : taps_(cfg.taps) {
    if (taps_.empty()) throw std::invalid_argument("VggExtractor: need at least one tap");
    std::sort(taps_.begin(), taps_.end());
    depth_ = taps_.back();
    Rng rng(cfg.seed);
    int in = 3, index = 0;
    for (int s = 0; s < 5 && index < depth_; ++s)
      for (int k = 0; k < kStageConvs[s] && index < depth_; ++k, ++index) {
        Layer l;
        l.conv = nn::Conv2d<T>({in, cfg.stage_channels[s], 3, true, false}, rng);
        // He init keeps activations alive through the ReLU stack.
        nn::init_normal(l.conv.weight().value, rng, std::sqrt(2.0 / (9.0 * in)));
        l.pool_before = s > 0 && k == 0;
        layers_.push_back(std::move(l));
        in = cfg.stage_channels[s];
      }
  }

  std::vector<Tensor<T>> taps(const Tensor<T>& x) override {
    if (x.c() != 3) throw std::invalid_argument("VggExtractor: expected RGB input");
    static constexpr double mean[3] = {0.485, 0.456, 0.406};
    static constexpr double stdev[3] = {0.229, 0.224, 0.225};
    Tensor<T> h = Tensor<T>::like(x);
    for (int n = 0; n < x.n(); ++n)
      for (int c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < x.plane(); ++i)
          h.channel(n, c)[i] = static_cast<T>(((x.channel(n, c)[i] + 1.0) * 0.5 - mean[c]) / stdev[c]);
    std::vector<Tensor<T>> out;
    const nn::Mode mode = nn::Mode::eval();
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      auto& l = layers_[i];
      if (l.pool_before) h = l.pool.forward(h);
      h = l.relu.forward(l.conv.forward(h, mode));
      if (is_tap(static_cast<int>(i) + 1)) out.push_back(h);
    }
    return out;
  }

  Tensor<T> backward(const std::vector<Tensor<T>>& tap_grads) override {
    if (tap_grads.size() != taps_.size()) throw std::invalid_argument("VggExtractor: tap gradient count mismatch");
    Tensor<T> d;
    int t = static_cast<int>(taps_.size()) - 1;
    for (int i = static_cast<int>(layers_.size()) - 1; i >= 0; --i) {
      auto& l = layers_[i];
      if (t >= 0 && taps_[t] == i + 1) {
        if (d.empty()) d = tap_grads[t];
        else d += tap_grads[t];
        --t;
      }
      d = l.conv.backward(l.relu.backward(d));
      if (l.pool_before) d = l.pool.backward(d);
    }
    static constexpr double stdev[3] = {0.229, 0.224, 0.225};
    for (int n = 0; n < d.n(); ++n)
      for (int c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < d.plane(); ++i) d.channel(n, c)[i] *= static_cast<T>(0.5 / stdev[c]);
    return d;
  }

  std::size_t tap_count() const override { return taps_.size(); }

  /// Conv layers in order ("conv1".."convN"), for weight import and oracles.
  void params(nn::ParamRefs<T>& out, const std::string& prefix) {
    for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].conv.params(out, nn::join(prefix, "conv" + std::to_string(i + 1)));
  }
  nn::Conv2d<T>& conv(int i) { return layers_.at(static_cast<std::size_t>(i)).conv; }
  bool pools_before(int i) const { return layers_.at(static_cast<std::size_t>(i)).pool_before; }
  int depth() const { return depth_; }
  const std::vector<int>& tap_indices() const { return taps_; }

 private:
  bool is_tap(int idx) const { return std::find(taps_.begin(), taps_.end(), idx) != taps_.end(); }

  struct Layer {
    nn::Conv2d<T> conv;
    nn::ReLU<T> relu;
    nn::MaxPool2<T> pool;
    bool pool_before = false;
  };
  std::vector<int> taps_;
  int depth_ = 0;
  std::vector<Layer> layers_;
};

}  // namespace bigcolor
