#include <gtest/gtest.h>

#include "bigcolor/losses.hpp"
#include "gradcheck.hpp"

using namespace bigcolor;
using namespace bigcolor::losses;
using gradcheck::random_tensor;

namespace {

Tensor<double> scores(std::vector<double> v) {
  Tensor<double> t(static_cast<int>(v.size()), 1, 1, 1);
  std::copy(v.begin(), v.end(), t.data());
  return t;
}

/// Straightforward nested-loop VGG forward: normalization, zero-padded 3x3
/// convs, ReLU, 2x2 max pooling. Returns the tapped activations.
using Image = std::vector<std::vector<std::vector<double>>>;  // [c][y][x]

Image naive_conv_relu(const Image& in, const Tensor<double>& w, const Tensor<double>& b) {
  const int co = w.n(), ci = w.c(), h = static_cast<int>(in[0].size()), wd = static_cast<int>(in[0][0].size());
  Image out(co, std::vector<std::vector<double>>(h, std::vector<double>(wd)));
  for (int o = 0; o < co; ++o)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < wd; ++x) {
        double s = b[o];
        for (int c = 0; c < ci; ++c)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int yy = y + ky - 1, xx = x + kx - 1;
              if (yy >= 0 && yy < h && xx >= 0 && xx < wd) s += w.at(o, c, ky, kx) * in[c][yy][xx];
            }
        out[o][y][x] = std::max(0.0, s);
      }
  return out;
}

Image naive_pool(const Image& in) {
  Image out(in.size(), std::vector<std::vector<double>>(in[0].size() / 2, std::vector<double>(in[0][0].size() / 2)));
  for (std::size_t c = 0; c < in.size(); ++c)
    for (std::size_t y = 0; y < out[c].size(); ++y)
      for (std::size_t x = 0; x < out[c][y].size(); ++x)
        out[c][y][x] = std::max({in[c][2 * y][2 * x], in[c][2 * y][2 * x + 1], in[c][2 * y + 1][2 * x],
                                 in[c][2 * y + 1][2 * x + 1]});
  return out;
}

std::vector<Image> naive_taps(VggExtractor<double>& vgg, const Tensor<double>& x, int n) {
  const double mean[3] = {0.485, 0.456, 0.406}, sd[3] = {0.229, 0.224, 0.225};
  Image h(3, std::vector<std::vector<double>>(x.h(), std::vector<double>(x.w())));
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < x.h(); ++y)
      for (int xx = 0; xx < x.w(); ++xx) h[c][y][xx] = ((x.at(n, c, y, xx) + 1) / 2 - mean[c]) / sd[c];
  std::vector<Image> taps;
  for (int i = 0; i < vgg.depth(); ++i) {
    if (vgg.pools_before(i)) h = naive_pool(h);
    h = naive_conv_relu(h, vgg.conv(i).weight().value, vgg.conv(i).bias().value);
    const auto& t = vgg.tap_indices();
    if (std::find(t.begin(), t.end(), i + 1) != t.end()) taps.push_back(h);
  }
  return taps;
}

ExtractorConfig tiny_vgg() {
  ExtractorConfig cfg;
  cfg.stage_channels = {3, 4, 4, 5, 5};
  cfg.taps = {1, 2, 6, 9};
  cfg.seed = 5;
  return cfg;
}

}  // namespace

TEST(Mse, Examples) {
  Rng rng(1);
  const auto t = random_tensor(rng, 2, 3, 4, 4);
  EXPECT_EQ(mse_loss(t, t), 0.0);
  auto p = t;
  for (auto& v : p.vec()) v += 0.1;
  EXPECT_NEAR(mse_loss(p, t), 0.01, 1e-12);
  EXPECT_THROW(mse_loss(t, Tensor<double>(2, 3, 4, 5)), std::invalid_argument);
}

TEST(Mse, MatchesDoubleLoop) {
  Rng rng(2);
  const auto a = random_tensor(rng, 2, 3, 5, 7), b = random_tensor(rng, 2, 3, 5, 7);
  double s = 0;
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 7; ++x) s += std::pow(a.at(n, c, y, x) - b.at(n, c, y, x), 2);
  EXPECT_NEAR(mse_loss(a, b), s / (2 * 3 * 5 * 7), 1e-10);
}

TEST(Mse, Gradient) {
  Rng rng(3);
  auto a = random_tensor(rng, 2, 3, 3, 3);
  const auto b = random_tensor(rng, 2, 3, 3, 3);
  const auto g = mse_loss_grad(a, b);
  EXPECT_GRAD_OK(gradcheck::check(a, g.grad, [&] { return mse_loss(a, b); }), "mse");
}

TEST(Perceptual, IdentityExtractorIsFourTimesMse) {
  Rng rng(4);
  const auto a = random_tensor(rng, 2, 3, 6, 6), b = random_tensor(rng, 2, 3, 6, 6);
  IdentityExtractor<double> id(4);
  EXPECT_NEAR(perceptual_loss(a, b, &id), 4 * mse_loss(a, b), 1e-10);
  EXPECT_EQ(perceptual_loss(a, a, &id), 0.0);
  EXPECT_THROW(perceptual_loss(a, b, static_cast<FeatureExtractor<double>*>(nullptr)), std::invalid_argument);
}

TEST(Perceptual, VggMatchesNestedLoopOracle) {
  VggExtractor<double> vgg(tiny_vgg());
  Rng rng(5);
  const auto a = random_tensor(rng, 2, 3, 16, 16, 0.5), b = random_tensor(rng, 2, 3, 16, 16, 0.5);
  double expected = 0;
  std::vector<double> per_tap(4, 0.0);
  std::vector<double> counts(4, 0.0);
  for (int n = 0; n < 2; ++n) {
    const auto ta = naive_taps(vgg, a, n), tb = naive_taps(vgg, b, n);
    for (std::size_t t = 0; t < ta.size(); ++t)
      for (std::size_t c = 0; c < ta[t].size(); ++c)
        for (std::size_t y = 0; y < ta[t][c].size(); ++y)
          for (std::size_t x = 0; x < ta[t][c][y].size(); ++x) {
            per_tap[t] += std::pow(ta[t][c][y][x] - tb[t][c][y][x], 2);
            counts[t] += 1;
          }
  }
  for (int t = 0; t < 4; ++t) expected += per_tap[t] / counts[t];
  EXPECT_GT(expected, 0.0);
  EXPECT_NEAR(perceptual_loss(a, b, &vgg), expected, 1e-8);
  EXPECT_EQ(perceptual_loss(a, a, &vgg), 0.0);
}

TEST(Perceptual, VggGradient) {
  VggExtractor<double> vgg(tiny_vgg());
  Rng rng(6);
  auto a = random_tensor(rng, 1, 3, 16, 16, 0.5);
  const auto b = random_tensor(rng, 1, 3, 16, 16, 0.5);
  const auto g = perceptual_loss_grad(a, b, &vgg);
  EXPECT_NEAR(g.value, perceptual_loss(a, b, &vgg), 1e-12);
  EXPECT_GRAD_OK(gradcheck::check(a, g.grad, [&] { return perceptual_loss(a, b, &vgg); }), "perceptual");
}

TEST(GenAdv, Examples) {
  EXPECT_EQ(gen_adv_loss(scores({1, 1, 1})).value, -1.0);
  EXPECT_EQ(gen_adv_loss(scores({0, 0})).value, 0.0);
  EXPECT_EQ(gen_adv_loss(scores({2, -2})).value, 0.0);
  auto s = scores({0.3, -1.2, 2.0});
  const auto g = gen_adv_loss(s);
  EXPECT_GRAD_OK(gradcheck::check(s, g.grad, [&] { return gen_adv_loss(s).value; }), "gen adv");
}

TEST(Hinge, Examples) {
  EXPECT_EQ(disc_hinge_loss(scores({1}), scores({-1})).value, 0.0);
  EXPECT_EQ(disc_hinge_loss(scores({0}), scores({0})).value, 2.0);
  EXPECT_NEAR(disc_hinge_loss(scores({2, 0.5}), scores({-0.2, -3})).value, 0.65, 1e-12);
}

TEST(Hinge, NonNegativeAndZeroOnlyWithMargins) {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const auto r = random_tensor(rng, 4, 1, 1, 1, 2.0), f = random_tensor(rng, 4, 1, 1, 1, 2.0);
    const double v = disc_hinge_loss(r, f).value;
    EXPECT_GE(v, 0.0);
    bool margins = true;
    for (int i = 0; i < 4; ++i) margins &= r[i] >= 1 && f[i] <= -1;
    EXPECT_EQ(v == 0.0, margins);
  }
}

TEST(Hinge, Gradient) {
  auto r = scores({0.2, 1.7, -0.4}), f = scores({-2.5, 0.1, 0.9});
  const auto h = disc_hinge_loss(r, f);
  EXPECT_GRAD_OK(gradcheck::check(r, h.grad_real, [&] { return disc_hinge_loss(r, f).value; }), "hinge real");
  EXPECT_GRAD_OK(gradcheck::check(f, h.grad_fake, [&] { return disc_hinge_loss(r, f).value; }), "hinge fake");
}

TEST(Combine, WeightedSum) {
  const LossWeights w{0.2, 0.03};
  EXPECT_NEAR(combine(0.5, 1.5, -2.0, w), 0.5 + 0.2 * 1.5 + 0.03 * -2.0, 1e-10);
  Rng rng(8);
  for (int i = 0; i < 100; ++i) {
    const double m = rng.uniform(), p = rng.uniform() * 3, a = rng.normal();
    EXPECT_NEAR(combine(m, p, a, w), m + 0.2 * p + 0.03 * a, 1e-10);
  }
  EXPECT_EQ(combine(1.0, 2.0, 3.0, LossWeights{0, 0}), 1.0);
}
