#pragma once

// Color conversions on [0, 1] images held as (N x C x H x W) tensors.
// YUV is BT.601 so that its luma row is exactly the grayscale formula;
// Lab assumes sRGB primaries/transfer and a D65 white point.

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

#include "bigcolor/tensor.hpp"

namespace bigcolor::colorspace {

using Mat3 = std::array<std::array<double, 3>, 3>;

inline constexpr double kLumaR = 0.2989;
inline constexpr double kLumaG = 0.5870;
inline constexpr double kLumaB = 0.1140;

// BT.601 chroma: U = 0.492111 (B - Y601), V = 0.877283 (R - Y601), with
// Y601 the unit-sum BT.601 luma. Written as channel differences so achromatic
// pixels give exactly zero chroma.
inline constexpr double kUScale = 0.492111;
inline constexpr double kVScale = 0.877283;

inline double chroma_u(double r, double g, double b) { return kUScale * (0.299 * (b - r) + 0.587 * (b - g)); }
inline double chroma_v(double r, double g, double b) { return kVScale * (0.587 * (r - g) + 0.114 * (r - b)); }
inline double luma(double r, double g, double b) { return kLumaR * r + kLumaG * g + kLumaB * b; }

/// Rows: Y, U, V (same coefficients as luma/chroma_u/chroma_v).
inline constexpr Mat3 kRgbToYuv{{
    {kLumaR, kLumaG, kLumaB},
    {-kUScale * 0.299, -kUScale * 0.587, kUScale * (0.299 + 0.587)},
    {kVScale * (0.587 + 0.114), -kVScale * 0.587, -kVScale * 0.114},
}};

inline Mat3 invert(const Mat3& m) {
  const double det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
                     m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                     m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  if (std::abs(det) < 1e-15) throw std::invalid_argument("singular 3x3 matrix");
  Mat3 r{};
  r[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det;
  r[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det;
  r[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det;
  r[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / det;
  r[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det;
  r[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det;
  r[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / det;
  r[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det;
  r[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det;
  return r;
}

inline Mat3 multiply(const Mat3& a, const Mat3& b) {
  Mat3 r{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) r[i][j] += a[i][k] * b[k][j];
  return r;
}

inline const Mat3& yuv_to_rgb_matrix() {
  static const Mat3 inv = invert(kRgbToYuv);
  return inv;
}

/// RGB -> RGB matrix that scales U and V by `factor` and keeps Y.
inline Mat3 chroma_scale_matrix(double factor) {
  const Mat3 scale{{{1, 0, 0}, {0, factor, 0}, {0, 0, factor}}};
  return multiply(yuv_to_rgb_matrix(), multiply(scale, kRgbToYuv));
}

inline std::array<double, 3> apply(const Mat3& m, const std::array<double, 3>& v) {
  return {m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
          m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
          m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2]};
}

// ---------------------------------------------------------------------------
// Scalar (per-pixel) conversions.

inline double srgb_to_linear(double c) {
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}
inline double linear_to_srgb(double c) {
  return c <= 0.0031308 ? 12.92 * c : 1.055 * std::pow(c, 1.0 / 2.4) - 0.055;
}

inline constexpr Mat3 kLinearRgbToXyz{{
    {0.4124564, 0.3575761, 0.1804375},
    {0.2126729, 0.7151522, 0.0721750},
    {0.0193339, 0.1191920, 0.9503041},
}};
// D65 white of the matrix above (row sums), so white maps to L=100, a=b=0.
inline constexpr std::array<double, 3> kWhiteD65{0.9504700, 1.0000001, 1.0888300};

inline const Mat3& xyz_to_linear_rgb_matrix() {
  static const Mat3 inv = invert(kLinearRgbToXyz);
  return inv;
}

inline constexpr double kLabEpsilon = 216.0 / 24389.0;
inline constexpr double kLabKappa = 24389.0 / 27.0;

inline double lab_f(double t) {
  return t > kLabEpsilon ? std::cbrt(t) : (kLabKappa * t + 16.0) / 116.0;
}
inline double lab_f_inv(double f) {
  const double f3 = f * f * f;
  return f3 > kLabEpsilon ? f3 : (116.0 * f - 16.0) / kLabKappa;
}

inline std::array<double, 3> rgb_to_lab_pixel(const std::array<double, 3>& rgb) {
  const std::array<double, 3> lin{srgb_to_linear(rgb[0]), srgb_to_linear(rgb[1]),
                                  srgb_to_linear(rgb[2])};
  const auto xyz = apply(kLinearRgbToXyz, lin);
  const double fx = lab_f(xyz[0] / kWhiteD65[0]);
  const double fy = lab_f(xyz[1] / kWhiteD65[1]);
  const double fz = lab_f(xyz[2] / kWhiteD65[2]);
  return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

inline std::array<double, 3> lab_to_rgb_pixel(const std::array<double, 3>& lab) {
  const double fy = (lab[0] + 16.0) / 116.0;
  const double fx = fy + lab[1] / 500.0;
  const double fz = fy - lab[2] / 200.0;
  const std::array<double, 3> xyz{lab_f_inv(fx) * kWhiteD65[0], lab_f_inv(fy) * kWhiteD65[1],
                                  lab_f_inv(fz) * kWhiteD65[2]};
  const auto lin = apply(xyz_to_linear_rgb_matrix(), xyz);
  return {linear_to_srgb(std::max(lin[0], 0.0)), linear_to_srgb(std::max(lin[1], 0.0)),
          linear_to_srgb(std::max(lin[2], 0.0))};
}

// ---------------------------------------------------------------------------
// Image-level operations.

template <typename T>
void require_finite(const Tensor<T>& img, const char* what) {
  if (!img.all_finite()) throw std::invalid_argument(std::string(what) + ": non-finite input");
}

template <typename T>
void require_channels(const Tensor<T>& img, int channels, const char* what) {
  if (img.c() != channels || img.h() < 1 || img.w() < 1 || img.n() < 1)
    throw std::invalid_argument(std::string(what) + ": expected " + std::to_string(channels) +
                                "-channel image, got " + img.shape_string());
}

template <typename T, typename F>
Tensor<T> map_pixels(const Tensor<T>& img, int out_channels, F&& f) {
  Tensor<T> out(img.n(), out_channels, img.h(), img.w());
  const std::size_t plane = img.plane();
  for (int n = 0; n < img.n(); ++n) {
    const T* r = img.channel(n, 0);
    const T* g = img.channel(n, 1);
    const T* b = img.channel(n, 2);
    for (std::size_t i = 0; i < plane; ++i) {
      const auto v = f(std::array<double, 3>{double(r[i]), double(g[i]), double(b[i])});
      for (int c = 0; c < out_channels; ++c) out.channel(n, c)[i] = static_cast<T>(v[c]);
    }
  }
  return out;
}

template <typename T>
Tensor<T> clamp01(Tensor<T> img) {
  for (auto& v : img.vec()) v = std::clamp(v, T(0), T(1));
  return img;
}

/// L = 0.2989 R + 0.5870 G + 0.1140 B.
template <typename T>
Tensor<T> rgb_to_gray(const Tensor<T>& img) {
  require_channels(img, 3, "rgb_to_gray");
  require_finite(img, "rgb_to_gray");
  return map_pixels(img, 1, [](const std::array<double, 3>& p) {
    return std::array<double, 1>{luma(p[0], p[1], p[2])};
  });
}

template <typename T>
Tensor<T> gray_to_rgb(const Tensor<T>& gray) {
  require_channels(gray, 1, "gray_to_rgb");
  Tensor<T> out(gray.n(), 3, gray.h(), gray.w());
  for (int n = 0; n < gray.n(); ++n)
    for (int c = 0; c < 3; ++c) std::copy(gray.item(n), gray.item(n) + gray.plane(), out.channel(n, c));
  return out;
}

template <typename T>
Tensor<T> rgb_to_yuv(const Tensor<T>& img) {
  require_channels(img, 3, "rgb_to_yuv");
  require_finite(img, "rgb_to_yuv");
  return map_pixels(img, 3, [](const std::array<double, 3>& p) {
    return std::array<double, 3>{luma(p[0], p[1], p[2]), chroma_u(p[0], p[1], p[2]),
                                 chroma_v(p[0], p[1], p[2])};
  });
}

/// Inverse of rgb_to_yuv; not clamped.
template <typename T>
Tensor<T> yuv_to_rgb(const Tensor<T>& yuv) {
  require_channels(yuv, 3, "yuv_to_rgb");
  require_finite(yuv, "yuv_to_rgb");
  return map_pixels(yuv, 3, [](const std::array<double, 3>& p) { return apply(yuv_to_rgb_matrix(), p); });
}

inline std::array<double, 3> chroma_scale_pixel(const std::array<double, 3>& p, double factor) {
  const auto& inv = yuv_to_rgb_matrix();
  const double du = (factor - 1.0) * chroma_u(p[0], p[1], p[2]);
  const double dv = (factor - 1.0) * chroma_v(p[0], p[1], p[2]);
  return {p[0] + inv[0][1] * du + inv[0][2] * dv, p[1] + inv[1][1] * du + inv[1][2] * dv,
          p[2] + inv[2][1] * du + inv[2][2] * dv};
}

template <typename T>
Tensor<T> chroma_scale_unclamped(const Tensor<T>& img, double factor) {
  return map_pixels(img, 3, [&](const std::array<double, 3>& p) { return chroma_scale_pixel(p, factor); });
}

/// Scale U and V by `factor` and clamp back into [0, 1]. Computed as
/// rgb + (factor - 1) * chroma(rgb), so gray pixels are exact fixed points.
template <typename T>
Tensor<T> chroma_augment(const Tensor<T>& img, double factor = 1.2) {
  if (!(factor > 0.0)) throw std::invalid_argument("chroma_augment: factor must be > 0");
  require_channels(img, 3, "chroma_augment");
  require_finite(img, "chroma_augment");
  return clamp01(chroma_scale_unclamped(img, factor));
}

template <typename T>
Tensor<T> rgb_to_lab(const Tensor<T>& img) {
  require_channels(img, 3, "rgb_to_lab");
  require_finite(img, "rgb_to_lab");
  return map_pixels(img, 3, [](const std::array<double, 3>& p) { return rgb_to_lab_pixel(p); });
}

/// Lab -> sRGB, clamped to [0, 1].
template <typename T>
Tensor<T> lab_to_rgb(const Tensor<T>& lab) {
  require_channels(lab, 3, "lab_to_rgb");
  require_finite(lab, "lab_to_rgb");
  return clamp01(map_pixels(lab, 3, [](const std::array<double, 3>& p) { return lab_to_rgb_pixel(p); }));
}

/// Lab L of an achromatic sRGB pixel with intensity g.
inline double gray_lab_lightness(double g) { return rgb_to_lab_pixel({g, g, g})[0]; }

/// Keep the a/b chroma of `synth` and take L from the grayscale image.
template <typename T>
Tensor<T> replace_luminance(const Tensor<T>& synth, const Tensor<T>& gray) {
  require_channels(synth, 3, "replace_luminance");
  require_channels(gray, 1, "replace_luminance");
  if (synth.n() != gray.n() || synth.h() != gray.h() || synth.w() != gray.w())
    throw std::invalid_argument("replace_luminance: dimension mismatch " + synth.shape_string() +
                                " vs " + gray.shape_string());
  require_finite(synth, "replace_luminance");
  require_finite(gray, "replace_luminance");
  Tensor<T> out(synth.shape());
  const std::size_t plane = synth.plane();
  for (int n = 0; n < synth.n(); ++n) {
    const T* g = gray.item(n);
    for (std::size_t i = 0; i < plane; ++i) {
      auto lab = rgb_to_lab_pixel(
          {double(synth.channel(n, 0)[i]), double(synth.channel(n, 1)[i]), double(synth.channel(n, 2)[i])});
      lab[0] = gray_lab_lightness(double(g[i]));
      const auto rgb = lab_to_rgb_pixel(lab);
      for (int c = 0; c < 3; ++c) out.channel(n, c)[i] = static_cast<T>(std::clamp(rgb[c], 0.0, 1.0));
    }
  }
  return out;
}

}  // namespace bigcolor::colorspace
