#pragma once

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "bigcolor/colorspace.hpp"
#include "bigcolor/conditioning.hpp"
#include "bigcolor/metrics.hpp"
#include "bigcolor/model.hpp"

namespace bigcolor {

struct AutoClass {};

/// Class index, explicit class vector, or "auto" (classifier estimate).
using ClassSpec = std::variant<int, std::vector<double>, AutoClass>;

struct ColorizeRequest {
  Tensor<float> gray;  // 1 x 1 x H x W in [0, 1]
  ClassSpec class_spec = 0;
  std::uint64_t seed = 0;
  int variants = 1;
  bool luminance_replace = true;
};

struct InferenceLimits {
  int max_variants = 16;
  long long max_area = 4096LL * 4096LL;
};

/// Thrown for requests that are invalid with respect to the loaded model
/// (bad class, too many variants, oversize input, missing classifier).
class RequestError : public std::invalid_argument {
 public:
  RequestError(std::string field, const std::string& message)
      : std::invalid_argument(message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

struct ClassEstimate {
  std::vector<double> probabilities;
  int top1 = 0;
};

/// Softmax of the classifier's logits on the grayscale image replicated to
/// three channels.
inline ClassEstimate estimate_class(const Tensor<float>& gray, const metrics::Classifier& classifier) {
  if (!classifier) throw RequestError("class", "class 'auto' requires a configured classifier");
  const Tensor<float> logits = classifier(colorspace::gray_to_rgb(gray));
  ClassEstimate e;
  const int k = logits.c();
  double mx = -INFINITY;
  for (int i = 0; i < k; ++i) mx = std::max(mx, double(logits.at(0, i, 0, 0)));
  double s = 0;
  e.probabilities.resize(k);
  for (int i = 0; i < k; ++i) s += e.probabilities[i] = std::exp(double(logits.at(0, i, 0, 0)) - mx);
  for (auto& p : e.probabilities) p /= s;
  e.top1 = metrics::argmax_row(logits, 0);
  return e;
}

/// Mirror index without edge repetition (numpy "reflect").
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

/// Pads bottom/right by reflection up to the next multiple of `multiple`.
template <typename T>
Tensor<T> reflect_pad_to_multiple(const Tensor<T>& x, int multiple) {
  const int h = (x.h() + multiple - 1) / multiple * multiple;
  const int w = (x.w() + multiple - 1) / multiple * multiple;
  if (h == x.h() && w == x.w()) return x;
  Tensor<T> y(x.n(), x.c(), h, w);
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c)
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) y.at(n, c, i, j) = x.at(n, c, reflect_index(i, x.h()), reflect_index(j, x.w()));
  return y;
}

template <typename T>
Tensor<T> crop(const Tensor<T>& x, int h, int w) {
  Tensor<T> y(x.n(), x.c(), h, w);
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c)
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) y.at(n, c, i, j) = x.at(n, c, i, j);
  return y;
}

/// Request validation that needs only the model's class count.
inline void check_request(const ColorizeRequest& req, int num_classes, const InferenceLimits& limits,
                          bool has_classifier) {
  const auto& g = req.gray;
  if (g.n() != 1 || g.c() != 1 || g.h() < 1 || g.w() < 1)
    throw RequestError("image", "expected a single grayscale image, got " + g.shape_string());
  if (static_cast<long long>(g.h()) * g.w() > limits.max_area)
    throw RequestError("image", "image area " + std::to_string(static_cast<long long>(g.h()) * g.w()) +
                                    " exceeds the limit of " + std::to_string(limits.max_area) + " pixels");
  if (req.variants < 1 || req.variants > limits.max_variants)
    throw RequestError("variants", "variants must be in [1, " + std::to_string(limits.max_variants) + "]");
  if (const int* idx = std::get_if<int>(&req.class_spec)) {
    if (*idx < 0 || *idx >= num_classes)
      throw RequestError("class", "class " + std::to_string(*idx) + " out of range [0, " +
                                      std::to_string(num_classes - 1) + "]");
  } else if (const auto* vec = std::get_if<std::vector<double>>(&req.class_spec)) {
    if (static_cast<int>(vec->size()) != num_classes)
      throw RequestError("class", "class vector has " + std::to_string(vec->size()) + " entries, expected " +
                                      std::to_string(num_classes));
    double s = 0;
    for (double v : *vec) {
      if (!std::isfinite(v) || v < 0) throw RequestError("class", "class vector entries must be finite and >= 0");
      s += v;
    }
    if (s <= 0) throw RequestError("class", "class vector must not be all zeros");
  } else if (!has_classifier) {
    throw RequestError("class", "class 'auto' requires a configured classifier");
  }
}

struct ColorizeResult {
  std::vector<Tensor<float>> images;  // 1 x 3 x H x W in [0, 1], one per variant
  std::vector<std::uint64_t> seeds;
  std::vector<double> class_vector;
  int class_index = -1;  // -1 for a soft class vector
};

/// Colorization with a frozen model. Not safe for concurrent calls on one
/// instance (layers keep forward caches); use one instance per thread.
class Colorizer {
 public:
  Colorizer(std::unique_ptr<ColorizationModel<float>> model, InferenceLimits limits = {},
            metrics::Classifier classifier = {})
      : model_(std::move(model)), limits_(limits), classifier_(std::move(classifier)) {
    if (!model_) throw std::invalid_argument("Colorizer: no model");
  }

  int num_classes() const { return model_->config().num_classes; }
  const InferenceLimits& limits() const { return limits_; }
  bool has_classifier() const { return static_cast<bool>(classifier_); }

  /// Validates everything that does not need a forward pass.
  void check(const ColorizeRequest& req) const { check_request(req, num_classes(), limits_, has_classifier()); }

  ColorizeResult colorize(const ColorizeRequest& req) {
    check(req);
    colorspace::require_finite(req.gray, "colorize");
    ColorizeResult out;
    if (const int* idx = std::get_if<int>(&req.class_spec)) {
      out.class_index = *idx;
      out.class_vector.assign(num_classes(), 0.0);
      out.class_vector[*idx] = 1.0;
    } else if (const auto* vec = std::get_if<std::vector<double>>(&req.class_spec)) {
      out.class_vector = *vec;
    } else {
      auto est = estimate_class(req.gray, classifier_);
      out.class_vector = std::move(est.probabilities);
      out.class_index = est.top1;
    }
    Tensor<float> cv(1, num_classes(), 1, 1);
    for (int k = 0; k < num_classes(); ++k) cv[k] = static_cast<float>(out.class_vector[k]);

    const ModelConfig& cfg = model_->config();
    const auto mode = nn::Mode::eval();
    const Tensor<float> padded = to_network_range(reflect_pad_to_multiple(req.gray, cfg.encoder.downsample_factor));
    const Tensor<float> c = model_->embedding().forward(cv, mode);
    const Tensor<float> f = model_->encoder().forward(padded, c, mode);
    for (int i = 0; i < req.variants; ++i) {
      const std::uint64_t seed = req.seed + static_cast<std::uint64_t>(i);
      const auto zv = sample_z<float>(seed, cfg.z_dim());
      Tensor<float> z(1, cfg.z_dim(), 1, 1);
      std::copy(zv.begin(), zv.end(), z.data());
      Tensor<float> img = model_->generator().forward(f, assemble_condition(z, c, cfg.chunk_count()), mode);
      img = crop(to_unit_range(img), req.gray.h(), req.gray.w());
      if (req.luminance_replace) img = colorspace::replace_luminance(img, req.gray);
      out.images.push_back(std::move(img));
      out.seeds.push_back(seed);
    }
    return out;
  }

  ColorizationModel<float>& model() { return *model_; }

 private:
  std::unique_ptr<ColorizationModel<float>> model_;
  InferenceLimits limits_;
  metrics::Classifier classifier_;
};

}  // namespace bigcolor
