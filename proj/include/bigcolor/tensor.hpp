#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace bigcolor {

/// Dense rank-4 array in NCHW order. Vectors and matrices are stored with
/// trailing unit dimensions (N x C x 1 x 1).
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(int n, int c, int h, int w, T fill = T(0))
      : shape_{n, c, h, w}, data_(checked_size(n, c, h, w), fill) {}
  explicit Tensor(std::array<int, 4> shape, T fill = T(0))
      : Tensor(shape[0], shape[1], shape[2], shape[3], fill) {}

  static Tensor like(const Tensor& other, T fill = T(0)) { return Tensor(other.shape_, fill); }

  int n() const { return shape_[0]; }
  int c() const { return shape_[1]; }
  int h() const { return shape_[2]; }
  int w() const { return shape_[3]; }
  const std::array<int, 4>& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  std::size_t plane() const { return static_cast<std::size_t>(shape_[2]) * shape_[3]; }
  std::size_t item_size() const { return plane() * shape_[1]; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::size_t offset(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
  }
  T& at(int n, int c, int h, int w) { return data_[offset(n, c, h, w)]; }
  const T& at(int n, int c, int h, int w) const { return data_[offset(n, c, h, w)]; }

  T* item(int n) { return data_.data() + static_cast<std::size_t>(n) * item_size(); }
  const T* item(int n) const { return data_.data() + static_cast<std::size_t>(n) * item_size(); }
  T* channel(int n, int c) { return data_.data() + offset(n, c, 0, 0); }
  const T* channel(int n, int c) const { return data_.data() + offset(n, c, 0, 0); }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  void zero() { fill(T(0)); }

  /// Same element count, new shape.
  Tensor reshaped(std::array<int, 4> s) const {
    Tensor out;
    out.shape_ = s;
    if (checked_size(s[0], s[1], s[2], s[3]) != data_.size())
      throw std::invalid_argument("reshape: element count mismatch");
    out.data_ = data_;
    return out;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    std::transform(data_.begin(), data_.end(), out.data(), [](T v) { return static_cast<U>(v); });
    return out;
  }

  Tensor& operator+=(const Tensor& o) {
    require_same_shape(*this, o, "operator+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Tensor& operator*=(T s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  std::string shape_string() const {
    std::ostringstream os;
    os << "(" << shape_[0] << ", " << shape_[1] << ", " << shape_[2] << ", " << shape_[3] << ")";
    return os.str();
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

  static void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape_ != b.shape_)
      throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.shape_string() +
                                  " vs " + b.shape_string());
  }

 private:
  static std::size_t checked_size(int n, int c, int h, int w) {
    if (n < 0 || c < 0 || h < 0 || w < 0) throw std::invalid_argument("negative tensor dimension");
    return static_cast<std::size_t>(n) * c * h * w;
  }

  std::array<int, 4> shape_{0, 0, 0, 0};
  std::vector<T> data_;
};

template <typename T>
Tensor<T> operator+(Tensor<T> a, const Tensor<T>& b) {
  a += b;
  return a;
}

/// Batch items [begin, end).
template <typename T>
Tensor<T> slice_batch(const Tensor<T>& x, int begin, int end) {
  if (begin < 0 || end > x.n() || begin > end) throw std::out_of_range("slice_batch: bad range");
  Tensor<T> out(end - begin, x.c(), x.h(), x.w());
  std::copy(x.item(begin), x.item(begin) + out.size(), out.data());
  return out;
}

template <typename T>
Tensor<T> concat_batch(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.c() != b.c() || a.h() != b.h() || a.w() != b.w())
    throw std::invalid_argument("concat_batch: item shape mismatch");
  Tensor<T> out(a.n() + b.n(), a.c(), a.h(), a.w());
  std::copy(a.data(), a.data() + a.size(), out.data());
  std::copy(b.data(), b.data() + b.size(), out.data() + a.size());
  return out;
}

/// Concatenate along the channel axis.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w())
    throw std::invalid_argument("concat_channels: shape mismatch");
  Tensor<T> out(a.n(), a.c() + b.c(), a.h(), a.w());
  for (int i = 0; i < a.n(); ++i) {
    std::copy(a.item(i), a.item(i) + a.item_size(), out.item(i));
    std::copy(b.item(i), b.item(i) + b.item_size(), out.item(i) + a.item_size());
  }
  return out;
}

/// Channels [begin, end) of every batch item.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, int begin, int end) {
  if (begin < 0 || end > x.c() || begin > end) throw std::out_of_range("slice_channels: bad range");
  Tensor<T> out(x.n(), end - begin, x.h(), x.w());
  for (int i = 0; i < x.n(); ++i)
    std::copy(x.channel(i, begin), x.channel(i, begin) + out.item_size(), out.item(i));
  return out;
}

template <typename T>
double sum(const Tensor<T>& x) {
  return std::accumulate(x.vec().begin(), x.vec().end(), 0.0,
                         [](double acc, T v) { return acc + static_cast<double>(v); });
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T>::require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

}  // namespace bigcolor
