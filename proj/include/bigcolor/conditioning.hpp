#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "bigcolor/nn/conv.hpp"

namespace bigcolor {

/// One-hot (or soft) class vectors, shape (N x num_classes x 1 x 1).
template <typename T>
Tensor<T> one_hot(const std::vector<int>& labels, int num_classes) {
  Tensor<T> v(static_cast<int>(labels.size()), num_classes, 1, 1);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes)
      throw std::out_of_range("class index " + std::to_string(labels[i]) + " outside [0, " +
                              std::to_string(num_classes) + ")");
    v.at(static_cast<int>(i), labels[i], 0, 0) = T(1);
  }
  return v;
}

/// Learned class embedding: c = E v, with E of shape (class_dim x num_classes).
template <typename T>
class ClassEmbedding {
 public:
  ClassEmbedding() = default;
  ClassEmbedding(int num_classes, int class_dim, Rng& rng, double init_std = 0.02)
      : layer_(num_classes, class_dim, false, false, rng) {
    nn::init_normal(layer_.weight().value, rng, init_std);
  }

  /// `strict` rejects all-zero class vectors.
  Tensor<T> forward(const Tensor<T>& v, const nn::Mode& mode = nn::Mode::eval(), bool strict = false) {
    if (static_cast<int>(v.item_size()) != num_classes())
      throw std::invalid_argument("embed_class: expected " + std::to_string(num_classes()) +
                                  "-dim class vector, got " + v.shape_string());
    if (strict)
      for (int n = 0; n < v.n(); ++n) {
        bool nonzero = false;
        for (std::size_t i = 0; i < v.item_size(); ++i) nonzero |= v.item(n)[i] != T(0);
        if (!nonzero) throw std::invalid_argument("embed_class: zero class vector");
      }
    return layer_.forward(v, mode);
  }

  void backward(const Tensor<T>& dc) { layer_.backward(dc); }

  int num_classes() const { return layer_.in_features(); }
  int class_dim() const { return layer_.out_features(); }
  /// Weight stored as (class_dim x num_classes): column k is class k's code.
  nn::Param<T>& matrix() { return layer_.weight(); }

  void params(nn::ParamRefs<T>& out, const std::string& prefix) { layer_.params(out, prefix); }

 private:
  nn::Linear<T> layer_;
};

/// Latent code drawn from N(0, I), reproducible from the seed.
template <typename T>
std::vector<T> sample_z(std::uint64_t seed, int dim = 68) {
  Rng rng(seed);
  std::vector<T> z(static_cast<std::size_t>(dim));
  for (auto& v : z) v = static_cast<T>(rng.normal());
  return z;
}

/// (N x z_dim) latent batch from a running RNG.
template <typename T>
Tensor<T> sample_z_batch(Rng& rng, int batch, int dim) {
  Tensor<T> z(batch, dim, 1, 1);
  for (auto& v : z.vec()) v = static_cast<T>(rng.normal());
  return z;
}

/// Split z into `chunks` equal parts and append the class code to each:
/// chunk k = [z[k*d : (k+1)*d], c]. Inputs are (N x dim x 1 x 1).
template <typename T>
std::vector<Tensor<T>> assemble_condition(const Tensor<T>& z, const Tensor<T>& c, int chunks) {
  if (chunks < 1) throw std::invalid_argument("assemble_condition: chunk count must be >= 1");
  if (z.n() != c.n()) throw std::invalid_argument("assemble_condition: batch mismatch");
  const int zd = static_cast<int>(z.item_size());
  if (zd % chunks != 0)
    throw std::invalid_argument("assemble_condition: z of dim " + std::to_string(zd) + " does not split into " +
                                std::to_string(chunks) + " chunks");
  const int part = zd / chunks;
  const int cd = static_cast<int>(c.item_size());
  std::vector<Tensor<T>> out;
  for (int k = 0; k < chunks; ++k) {
    Tensor<T> chunk(z.n(), part + cd, 1, 1);
    for (int n = 0; n < z.n(); ++n) {
      std::copy(z.item(n) + k * part, z.item(n) + (k + 1) * part, chunk.item(n));
      std::copy(c.item(n), c.item(n) + cd, chunk.item(n) + part);
    }
    out.push_back(std::move(chunk));
  }
  return out;
}

/// Sum the class-code part of the chunk gradients (the z part is discarded).
template <typename T>
Tensor<T> condition_class_grad(const std::vector<Tensor<T>>& chunk_grads, int class_dim) {
  if (chunk_grads.empty()) return {};
  const int n = chunk_grads.front().n();
  const int part = static_cast<int>(chunk_grads.front().item_size()) - class_dim;
  Tensor<T> dc(n, class_dim, 1, 1);
  for (const auto& g : chunk_grads)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < class_dim; ++j) dc.item(i)[j] += g.item(i)[part + j];
  return dc;
}

/// Index -> label table read from "index<TAB>label" lines (or "index label").
class ClassManifest {
 public:
  ClassManifest() = default;
  explicit ClassManifest(std::vector<std::string> labels) : labels_(std::move(labels)) {}

  static ClassManifest load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open class manifest " + path);
    std::vector<std::pair<int, std::string>> rows;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty() || line[0] == '#') continue;
      std::istringstream is(line);
      int idx;
      if (!(is >> idx)) throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected class index");
      std::string label;
      std::getline(is >> std::ws, label);
      rows.emplace_back(idx, label);
    }
    std::vector<std::string> labels(rows.size());
    std::vector<bool> seen(rows.size(), false);
    for (auto& [idx, label] : rows) {
      if (idx < 0 || idx >= static_cast<int>(rows.size()) || seen[idx])
        throw std::runtime_error(path + ": class indices must be a permutation of 0.." +
                                 std::to_string(rows.size() - 1));
      seen[idx] = true;
      labels[idx] = label;
    }
    return ClassManifest(std::move(labels));
  }

  static ClassManifest numbered(int count) {
    std::vector<std::string> labels;
    for (int i = 0; i < count; ++i) labels.push_back("class_" + std::to_string(i));
    return ClassManifest(std::move(labels));
  }

  int size() const { return static_cast<int>(labels_.size()); }
  const std::string& label(int i) const { return labels_.at(static_cast<std::size_t>(i)); }
  const std::vector<std::string>& labels() const { return labels_; }

 private:
  std::vector<std::string> labels_;
};

}  // namespace bigcolor
