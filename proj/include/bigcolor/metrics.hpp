#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include <functional>
#include <json.hpp>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "bigcolor/archive.hpp"
#include "bigcolor/feature_extractor.hpp"
#include "bigcolor/resize.hpp"
#include "bigcolor/tensor.hpp"

namespace bigcolor::metrics {

/// Hasler-Suesstrunk colorfulness of item `index` of an RGB [0, 1] tensor,
/// computed on the 0-255 scale: sigma_rgyb + 0.3 * mu_rgyb with
/// rg = R - G and yb = (R + G) / 2 - B.
template <typename T>
double colorfulness(const Tensor<T>& img, int index = 0) {
  if (img.c() != 3) throw std::invalid_argument("colorfulness: expected RGB image, got " + img.shape_string());
  const std::size_t n = img.plane();
  if (n == 0) throw std::invalid_argument("colorfulness: empty image");
  const T* r = img.channel(index, 0);
  const T* g = img.channel(index, 1);
  const T* b = img.channel(index, 2);
  double s_rg = 0, s_yb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    s_rg += 255.0 * (double(r[i]) - double(g[i]));
    s_yb += 255.0 * (0.5 * (double(r[i]) + double(g[i])) - double(b[i]));
  }
  const double m_rg = s_rg / n, m_yb = s_yb / n;
  double v_rg = 0, v_yb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double rg = 255.0 * (double(r[i]) - double(g[i])) - m_rg;
    const double yb = 255.0 * (0.5 * (double(r[i]) + double(g[i])) - double(b[i])) - m_yb;
    v_rg += rg * rg;
    v_yb += yb * yb;
  }
  const double sigma = std::sqrt(v_rg / n + v_yb / n);
  const double mu = std::sqrt(m_rg * m_rg + m_yb * m_yb);
  return sigma + 0.3 * mu;
}

/// Mean colorfulness over a batch.
template <typename T>
double mean_colorfulness(const Tensor<T>& batch) {
  if (batch.n() == 0) return 0.0;
  double s = 0;
  for (int i = 0; i < batch.n(); ++i) s += colorfulness(batch, i);
  return s / batch.n();
}

// ---------------------------------------------------------------------------
// Frechet distance between Gaussian feature statistics.

struct FeatureStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
  long long count = 0;

  int dim() const { return static_cast<int>(mean.size()); }
};

/// Rows of `features` are samples. Covariance uses the unbiased (n - 1)
/// normalization.
inline FeatureStats compute_stats(const Eigen::MatrixXd& features) {
  if (features.rows() < 2) throw std::invalid_argument("compute_stats: need at least 2 samples");
  FeatureStats s;
  s.count = features.rows();
  s.mean = features.colwise().mean().transpose();
  const Eigen::MatrixXd centered = features.rowwise() - s.mean.transpose();
  s.covariance = centered.transpose() * centered / static_cast<double>(features.rows() - 1);
  return s;
}

/// Count-weighted merge of two sets of statistics (same as computing the
/// statistics of the union).
inline FeatureStats merge_stats(const FeatureStats& a, const FeatureStats& b) {
  if (a.count == 0) return b;
  if (b.count == 0) return a;
  if (a.dim() != b.dim()) throw std::invalid_argument("merge_stats: dimension mismatch");
  const double na = static_cast<double>(a.count), nb = static_cast<double>(b.count), n = na + nb;
  FeatureStats s;
  s.count = a.count + b.count;
  s.mean = (na * a.mean + nb * b.mean) / n;
  const Eigen::VectorXd delta = b.mean - a.mean;
  const Eigen::MatrixXd scatter = (na - 1) * a.covariance + (nb - 1) * b.covariance + delta * delta.transpose() * (na * nb / n);
  s.covariance = scatter / (n - 1);
  return s;
}

namespace detail {
inline constexpr double kEigenTolerance = 1e-6;

/// Eigen-decomposition of a symmetric PSD matrix with small negative
/// eigenvalues clamped to zero; larger ones are an error.
inline Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> psd_eigen(const Eigen::MatrixXd& m, const char* what) {
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  if (es.info() != Eigen::Success) throw std::runtime_error(std::string(what) + ": eigendecomposition failed");
  const double scale = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
  if (es.eigenvalues().minCoeff() < -kEigenTolerance * scale)
    throw std::runtime_error(std::string(what) + ": matrix is not positive semi-definite (eigenvalue " +
                             std::to_string(es.eigenvalues().minCoeff()) + ")");
  return es;
}
}  // namespace detail

/// ||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2}). The trace of the
/// square root is computed as tr((S_a^{1/2} S_b S_a^{1/2})^{1/2}), which has
/// the same eigenvalues and stays symmetric.
inline double fid(const FeatureStats& a, const FeatureStats& b) {
  if (a.dim() != b.dim() || a.dim() == 0) throw std::invalid_argument("fid: dimension mismatch");
  const auto ea = detail::psd_eigen(a.covariance, "fid(covariance a)");
  const Eigen::VectorXd sqrt_vals = ea.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Eigen::MatrixXd sqrt_a = ea.eigenvectors() * sqrt_vals.asDiagonal() * ea.eigenvectors().transpose();
  detail::psd_eigen(b.covariance, "fid(covariance b)");
  const auto em = detail::psd_eigen(sqrt_a * b.covariance * sqrt_a, "fid(product)");
  const double tr_sqrt = em.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double mean_term = (a.mean - b.mean).squaredNorm();
  return mean_term + a.covariance.trace() + b.covariance.trace() - 2.0 * tr_sqrt;
}

inline nlohmann::json stats_to_json(const FeatureStats& s) {
  nlohmann::json j;
  j["d"] = s.dim();
  j["count"] = s.count;
  j["mean"] = std::vector<double>(s.mean.data(), s.mean.data() + s.mean.size());
  std::vector<double> cov(static_cast<std::size_t>(s.dim()) * s.dim());
  for (int r = 0; r < s.dim(); ++r)
    for (int c = 0; c < s.dim(); ++c) cov[static_cast<std::size_t>(r) * s.dim() + c] = s.covariance(r, c);
  j["covariance"] = cov;
  return j;
}

inline FeatureStats stats_from_json(const nlohmann::json& j) {
  FeatureStats s;
  const int d = j.at("d").get<int>();
  s.count = j.at("count").get<long long>();
  const auto mean = j.at("mean").get<std::vector<double>>();
  const auto cov = j.at("covariance").get<std::vector<double>>();
  if (d < 1 || static_cast<int>(mean.size()) != d || cov.size() != static_cast<std::size_t>(d) * d)
    throw std::runtime_error("stats file: inconsistent dimensions");
  s.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), d);
  s.covariance.resize(d, d);
  for (int r = 0; r < d; ++r)
    for (int c = 0; c < d; ++c) s.covariance(r, c) = cov[static_cast<std::size_t>(r) * d + c];
  return s;
}

inline void save_stats(const std::string& path, const FeatureStats& s) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write stats file " + path);
  out << stats_to_json(s).dump() << "\n";
}

inline FeatureStats load_stats(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open stats file " + path);
  return stats_from_json(nlohmann::json::parse(in));
}

// ---------------------------------------------------------------------------
// Feature extraction for FID.

/// Maps a batch of RGB [0, 1] images to (N x d) features.
using FidFeatureFn = std::function<Eigen::MatrixXd(const Tensor<float>&)>;

/// Deterministic random-weight convolutional features: images are resized
/// to `size` x `size`, passed through a small VGG-style stack and globally
/// average-pooled at each tap. Used when no pretrained network is supplied.
class RandomConvFeatures {
 public:
  explicit RandomConvFeatures(int size = 64, std::uint64_t seed = 7) : size_(size) {
    ExtractorConfig cfg;
    cfg.stage_channels = {16, 32, 32, 64, 64};
    cfg.taps = {2, 4, 7};
    cfg.seed = seed;
    net_ = std::make_unique<VggExtractor<float>>(cfg);
  }

  Eigen::MatrixXd operator()(const Tensor<float>& images) {
    Tensor<float> x = bigcolor::resize_bilinear(images, size_, size_);
    for (auto& v : x.vec()) v = v * 2.0f - 1.0f;
    const auto taps = net_->taps(x);
    int d = 0;
    for (const auto& t : taps) d += t.c();
    Eigen::MatrixXd f(images.n(), d);
    int off = 0;
    for (const auto& t : taps) {
      for (int n = 0; n < t.n(); ++n)
        for (int c = 0; c < t.c(); ++c) {
          double s = 0;
          for (std::size_t i = 0; i < t.plane(); ++i) s += t.channel(n, c)[i];
          f(n, off + c) = s / static_cast<double>(t.plane());
        }
      off += t.c();
    }
    return f;
  }

 private:
  int size_;
  std::shared_ptr<VggExtractor<float>> net_;
};

// ---------------------------------------------------------------------------
// Classification accuracy.

/// Maps RGB [0, 1] images to (N x K) logits.
using Classifier = std::function<Tensor<float>(const Tensor<float>&)>;

inline int argmax_row(const Tensor<float>& logits, int n) {
  int best = 0;
  for (int k = 1; k < logits.c(); ++k)
    if (logits.at(n, k, 0, 0) > logits.at(n, best, 0, 0)) best = k;
  return best;
}

/// Top-1 accuracy in percent.
inline double classification_accuracy(const Tensor<float>& images, const std::vector<int>& labels,
                                      const Classifier& classifier) {
  if (!classifier) throw std::invalid_argument("classification_accuracy: no classifier configured");
  if (static_cast<int>(labels.size()) != images.n())
    throw std::invalid_argument("classification_accuracy: label count does not match image count");
  if (labels.empty()) throw std::invalid_argument("classification_accuracy: empty set");
  const Tensor<float> logits = classifier(images);
  if (logits.n() != images.n()) throw std::runtime_error("classifier returned wrong batch size");
  int correct = 0;
  for (int n = 0; n < images.n(); ++n) correct += argmax_row(logits, n) == labels[n];
  return 100.0 * correct / static_cast<double>(labels.size());
}

/// Convolutional classifier stored as a tensor archive: VGG-style features
/// (last tap, global average pooled) followed by a linear head. Archive
/// metadata: {"format": "bigcolor-classifier", "extractor": {...},
/// "num_classes": K, "input_size": S}; tensors "features.convI.weight/bias",
/// "head.weight" (K x F), "head.bias" (K).
class ConvClassifier {
 public:
  ConvClassifier(const ExtractorConfig& cfg, int num_classes, int input_size, std::uint64_t seed = 11)
      : cfg_(cfg), input_size_(input_size), features_(std::make_shared<VggExtractor<float>>(cfg)) {
    const int last_stage = stage_of(cfg.taps.back());
    feature_dim_ = cfg.stage_channels[last_stage];
    Rng rng(seed);
    head_w_ = Tensor<float>(num_classes, feature_dim_, 1, 1);
    head_b_ = Tensor<float>(1, num_classes, 1, 1);
    nn::init_xavier(head_w_, rng, feature_dim_, num_classes);
  }

  static ConvClassifier load(const std::string& path) {
    const Archive ar = Archive::load(path);
    if (ar.meta.value("format", "") != "bigcolor-classifier") throw ArchiveError(path + ": not a classifier archive");
    ConvClassifier c(ar.meta.at("extractor").get<ExtractorConfig>(), ar.meta.at("num_classes").get<int>(),
                     ar.meta.at("input_size").get<int>());
    nn::ParamRefs<float> ps;
    c.features_->params(ps, "features");
    for (auto& [name, p] : ps) p->value = ar.get<float>(name);
    c.head_w_ = ar.get<float>("head.weight");
    c.head_b_ = ar.get<float>("head.bias");
    return c;
  }

  void save(const std::string& path) const {
    Archive ar;
    ar.meta["format"] = "bigcolor-classifier";
    ar.meta["extractor"] = cfg_;
    ar.meta["num_classes"] = num_classes();
    ar.meta["input_size"] = input_size_;
    nn::ParamRefs<float> ps;
    features_->params(ps, "features");
    for (auto& [name, p] : ps) ar.put(name, p->value);
    ar.put("head.weight", head_w_);
    ar.put("head.bias", head_b_);
    ar.save(path);
  }

  /// Globally pooled features of the last tap, (N x F).
  Tensor<float> features(const Tensor<float>& images) const {
    Tensor<float> x = bigcolor::resize_bilinear(images, input_size_, input_size_);
    for (auto& v : x.vec()) v = v * 2.0f - 1.0f;
    const auto taps = features_->taps(x);
    const Tensor<float>& t = taps.back();
    Tensor<float> f(t.n(), t.c(), 1, 1);
    for (int n = 0; n < t.n(); ++n)
      for (int c = 0; c < t.c(); ++c) {
        double s = 0;
        for (std::size_t i = 0; i < t.plane(); ++i) s += t.channel(n, c)[i];
        f.at(n, c, 0, 0) = static_cast<float>(s / t.plane());
      }
    return f;
  }

  Tensor<float> operator()(const Tensor<float>& images) const {
    const Tensor<float> f = features(images);
    Tensor<float> logits(images.n(), num_classes(), 1, 1);
    for (int n = 0; n < images.n(); ++n)
      for (int k = 0; k < num_classes(); ++k) {
        double s = head_b_[k];
        for (int j = 0; j < feature_dim_; ++j) s += double(head_w_.at(k, j, 0, 0)) * f.at(n, j, 0, 0);
        logits.at(n, k, 0, 0) = static_cast<float>(s);
      }
    return logits;
  }

  int num_classes() const { return head_w_.n(); }
  int feature_dim() const { return feature_dim_; }
  Tensor<float>& head_weight() { return head_w_; }
  Tensor<float>& head_bias() { return head_b_; }

 private:
  static int stage_of(int conv_index) {
    int seen = 0;
    for (int s = 0; s < 5; ++s) {
      seen += VggExtractor<float>::kStageConvs[s];
      if (conv_index <= seen) return s;
    }
    return 4;
  }

  ExtractorConfig cfg_;
  int input_size_;
  int feature_dim_ = 0;
  std::shared_ptr<VggExtractor<float>> features_;
  Tensor<float> head_w_, head_b_;
};

struct EvalReport {
  double colorfulness = 0;
  double fid = 0;
  std::optional<double> classification_accuracy;
};

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j;
  j["colorfulness"] = r.colorfulness;
  j["fid"] = r.fid;
  if (r.classification_accuracy) j["classification_accuracy"] = *r.classification_accuracy;
  else j["classification_accuracy"] = nullptr;
  return j;
}

}  // namespace bigcolor::metrics
