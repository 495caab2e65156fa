#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>

#include "bigcolor/colorspace.hpp"
#include "bigcolor/random.hpp"

using namespace bigcolor;
namespace cs = bigcolor::colorspace;

namespace {

Tensor<double> pixel(double r, double g, double b) {
  Tensor<double> t(1, 3, 1, 1);
  t[0] = r;
  t[1] = g;
  t[2] = b;
  return t;
}

Tensor<double> random_image(Rng& rng, int h, int w) {
  Tensor<double> t(1, 3, h, w);
  for (auto& v : t.vec()) v = rng.uniform();
  return t;
}

// Reference YUV: luma row from the grayscale weights, chroma rows from the
// textbook BT.601 definitions U = 0.492111 (B - Y601), V = 0.877283 (R - Y601).
Eigen::Matrix3d reference_yuv_matrix() {
  Eigen::Matrix3d m;
  const double yr = 0.299, yg = 0.587, yb = 0.114;
  m << 0.2989, 0.5870, 0.1140,                                //
      -0.492111 * yr, -0.492111 * yg, 0.492111 * (1 - yb),    //
      0.877283 * (1 - yr), -0.877283 * yg, -0.877283 * yb;
  return m;
}

// Reference sRGB (D65) -> Lab written directly from the published formulas.
Eigen::Vector3d reference_lab(Eigen::Vector3d rgb) {
  auto lin = [](double c) { return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4); };
  Eigen::Matrix3d m;
  m << 0.4124564, 0.3575761, 0.1804375, 0.2126729, 0.7151522, 0.0721750, 0.0193339, 0.1191920, 0.9503041;
  const Eigen::Vector3d l(lin(rgb[0]), lin(rgb[1]), lin(rgb[2]));
  const Eigen::Vector3d xyz = m * l;
  const Eigen::Vector3d white = m * Eigen::Vector3d::Ones();
  auto f = [](double t) {
    const double e = 216.0 / 24389.0, k = 24389.0 / 27.0;
    return t > e ? std::cbrt(t) : (k * t + 16.0) / 116.0;
  };
  const double fx = f(xyz[0] / white[0]), fy = f(xyz[1] / white[1]), fz = f(xyz[2] / white[2]);
  return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

}  // namespace

TEST(Colorspace, GrayFootnoteCoefficients) {
  EXPECT_DOUBLE_EQ(cs::rgb_to_gray(pixel(1, 0, 0))[0], 0.2989);
  EXPECT_DOUBLE_EQ(cs::rgb_to_gray(pixel(0, 0, 0))[0], 0.0);
  EXPECT_NEAR(cs::rgb_to_gray(pixel(1, 1, 1))[0], 0.9999, 1e-15);
}

TEST(Colorspace, GrayRejectsNonFinite) {
  EXPECT_THROW(cs::rgb_to_gray(pixel(NAN, 0, 0)), std::invalid_argument);
  EXPECT_THROW(cs::rgb_to_gray(Tensor<double>(1, 1, 2, 2)), std::invalid_argument);
}

TEST(Colorspace, YuvMatchesReferenceMatrix) {
  Rng rng(3);
  const Eigen::Matrix3d m = reference_yuv_matrix();
  for (int i = 0; i < 200; ++i) {
    const Tensor<double> p = random_image(rng, 1, 1);
    const Tensor<double> yuv = cs::rgb_to_yuv(p);
    const Eigen::Vector3d ref = m * Eigen::Vector3d(p[0], p[1], p[2]);
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(yuv[c], ref[c], 1e-12);
  }
  // Red pixel against a third-party BT.601 implementation.
  const Tensor<double> red = cs::rgb_to_yuv(pixel(1, 0, 0));
  EXPECT_NEAR(red[1], -0.14714119, 1e-8);
  EXPECT_NEAR(red[2], 0.61497538, 1e-8);
}

TEST(Colorspace, YuvLumaIsGrayExactly) {
  Rng rng(4);
  const auto img = random_image(rng, 7, 5);
  const auto yuv = cs::rgb_to_yuv(img);
  const auto gray = cs::rgb_to_gray(img);
  for (std::size_t i = 0; i < gray.size(); ++i) EXPECT_EQ(yuv.channel(0, 0)[i], gray[i]);
}

TEST(Colorspace, YuvAchromaticAndRoundTrip) {
  const auto g = cs::rgb_to_yuv(pixel(0.37, 0.37, 0.37));
  EXPECT_NEAR(g[0], 0.9999 * 0.37, 1e-15);
  EXPECT_EQ(g[1], 0.0);
  EXPECT_EQ(g[2], 0.0);
  Rng rng(5);
  const auto img = random_image(rng, 9, 11);
  EXPECT_LT(max_abs_diff(cs::yuv_to_rgb(cs::rgb_to_yuv(img)), img), 1e-6);
}

TEST(Colorspace, ChromaAugmentMatchesReferencePipeline) {
  const Eigen::Matrix3d m = reference_yuv_matrix();
  const Eigen::Matrix3d inv = m.inverse();
  for (auto p : {Eigen::Vector3d(0.6, 0.4, 0.3), Eigen::Vector3d(0.2, 0.5, 0.7), Eigen::Vector3d(0.45, 0.5, 0.55)}) {
    Eigen::Vector3d yuv = m * p;
    yuv[1] *= 1.2;
    yuv[2] *= 1.2;
    const Eigen::Vector3d ref = (inv * yuv).cwiseMax(0.0).cwiseMin(1.0);
    const auto out = cs::chroma_augment(pixel(p[0], p[1], p[2]), 1.2);
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(out[c], ref[c], 1e-12);
  }
  // Cross-check against a third-party BT.601 pipeline (luma weights differ in
  // the fourth decimal, hence the looser bound).
  const auto out = cs::chroma_augment(pixel(0.6, 0.4, 0.3), 1.2);
  EXPECT_NEAR(out[0], 0.63032, 1e-3);
  EXPECT_NEAR(out[1], 0.39032, 1e-3);
  EXPECT_NEAR(out[2], 0.27032, 1e-3);
}

TEST(Colorspace, ChromaAugmentProperties) {
  Rng rng(6);
  Tensor<double> gray(1, 3, 6, 6);
  for (int i = 0; i < 36; ++i) {
    const double v = rng.uniform();
    for (int c = 0; c < 3; ++c) gray.channel(0, c)[i] = v;
  }
  EXPECT_EQ(cs::chroma_augment(gray, 1.2), gray);
  const auto img = random_image(rng, 6, 6);
  EXPECT_LT(max_abs_diff(cs::chroma_augment(img, 1.0), img), 1e-6);
  const auto y0 = cs::rgb_to_gray(img);
  const auto y1 = cs::rgb_to_gray(cs::chroma_scale_unclamped(img, 1.2));
  EXPECT_LT(max_abs_diff(y0, y1), 1e-6);
  const auto clamped = cs::chroma_augment(img, 3.0);
  for (double v : clamped.vec()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_THROW(cs::chroma_augment(img, 0.0), std::invalid_argument);
  EXPECT_THROW(cs::chroma_augment(img, -1.0), std::invalid_argument);
}

TEST(Colorspace, LabReferenceValues) {
  const auto white = cs::rgb_to_lab(pixel(1, 1, 1));
  EXPECT_NEAR(white[0], 100.0, 1e-9);
  EXPECT_NEAR(white[1], 0.0, 1e-9);
  EXPECT_NEAR(white[2], 0.0, 1e-9);
  EXPECT_NEAR(cs::rgb_to_lab(pixel(0, 0, 0))[0], 0.0, 1e-12);

  const auto p = cs::rgb_to_lab(pixel(0.5, 0.2, 0.8));
  const Eigen::Vector3d ref = reference_lab({0.5, 0.2, 0.8});
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(p[c], ref[c], 1e-9);
  // Third-party values (white normalized slightly differently).
  EXPECT_NEAR(p[0], 40.04367127, 1e-3);
  EXPECT_NEAR(p[1], 60.25395835, 1e-2);
  EXPECT_NEAR(p[2], -65.67182688, 1e-2);
}

TEST(Colorspace, LabRoundTripRandomPixels) {
  Rng rng(7);
  const auto img = random_image(rng, 25, 40);
  const auto lab = cs::rgb_to_lab(img);
  for (std::size_t i = 0; i < img.plane(); ++i) {
    const double l = lab.channel(0, 0)[i];
    EXPECT_GE(l, 0.0);
    EXPECT_LE(l, 100.0 + 1e-9);
    const Eigen::Vector3d ref =
        reference_lab({img.channel(0, 0)[i], img.channel(0, 1)[i], img.channel(0, 2)[i]});
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(lab.channel(0, c)[i], ref[c], 1e-9);
  }
  EXPECT_LT(max_abs_diff(cs::lab_to_rgb(lab), img), 1e-3);
}

TEST(Colorspace, ReplaceLuminanceExamples) {
  // Synth equal to the replicated gray is a no-op.
  Rng rng(8);
  Tensor<double> gray(1, 1, 4, 4);
  for (auto& v : gray.vec()) v = rng.uniform();
  const auto synth = cs::gray_to_rgb(gray);
  EXPECT_LT(max_abs_diff(cs::replace_luminance(synth, gray), synth), 1e-3);

  // Solid red synth with 0.5 gray. Pure red re-lit to the gray's L leaves
  // the sRGB gamut, so the unclamped result carries the target Lab triple and
  // the output is its clamp.
  Tensor<double> red(1, 3, 2, 2);
  for (int i = 0; i < 4; ++i) red.channel(0, 0)[i] = 1.0;
  Tensor<double> half(1, 1, 2, 2, 0.5);
  const Eigen::Vector3d gray_lab = reference_lab({0.5, 0.5, 0.5});
  const Eigen::Vector3d red_lab = reference_lab({1, 0, 0});
  const auto target = cs::lab_to_rgb_pixel({gray_lab[0], red_lab[1], red_lab[2]});
  const auto back = cs::rgb_to_lab_pixel(target);
  EXPECT_NEAR(back[0], gray_lab[0], 1e-9);
  const auto out = cs::replace_luminance(red, half);
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(out.channel(0, c)[0], std::clamp(target[c], 0.0, 1.0), 1e-12);

  // A less saturated red stays in gamut: L matches to 1e-3 and the hue is kept.
  Tensor<double> soft(1, 3, 1, 1);
  soft[0] = 0.8, soft[1] = 0.3, soft[2] = 0.25;
  const auto lab = cs::rgb_to_lab(cs::replace_luminance(soft, Tensor<double>(1, 1, 1, 1, 0.5)));
  const Eigen::Vector3d soft_lab = reference_lab({0.8, 0.3, 0.25});
  EXPECT_NEAR(lab[0], gray_lab[0], 1e-3);
  EXPECT_NEAR(std::atan2(lab[2], lab[1]), std::atan2(soft_lab[2], soft_lab[1]), 1e-3);
}

TEST(Colorspace, ReplaceLuminanceSelf) {
  // Gray whose Lab L equals synth's own L leaves synth unchanged.
  Rng rng(9);
  const auto synth = random_image(rng, 5, 5);
  const auto lab = cs::rgb_to_lab(synth);
  Tensor<double> gray(1, 1, 5, 5);
  for (std::size_t i = 0; i < gray.size(); ++i) {
    const double l = lab.channel(0, 0)[i];
    const double fy = (l + 16.0) / 116.0;
    const double y = fy > 6.0 / 29.0 ? fy * fy * fy : (l / (24389.0 / 27.0));
    gray[i] = cs::linear_to_srgb(y);
  }
  EXPECT_LT(max_abs_diff(cs::replace_luminance(synth, gray), synth), 1e-3);
}

TEST(Colorspace, ReplaceLuminanceRejectsMismatch) {
  EXPECT_THROW(cs::replace_luminance(Tensor<double>(1, 3, 4, 4), Tensor<double>(1, 1, 4, 5)), std::invalid_argument);
}
