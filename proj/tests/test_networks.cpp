#include <gtest/gtest.h>

#include "bigcolor/discriminator.hpp"
#include "bigcolor/model.hpp"
#include "gradcheck.hpp"

using namespace bigcolor;
using gradcheck::random_tensor;
using nn::Mode;

namespace {

Mode frozen() { return nn::Mode{true, nullptr, false}; }

ModelConfig tiny_config() {
  ModelConfig m;
  m.num_classes = 3;
  m.class_dim = 5;
  m.z_chunk_dim = 3;
  m.encoder.channels = {4, 6, 8};
  m.encoder.downsample_factor = 4;
  m.encoder.dropout_rate = 0.0;
  m.generator.channels = {8, 6};
  m.generator.attention_stage = 0;
  m.discriminator.channels = {4, 6};
  return m;
}

Tensor<float> gray_input(int h, int w, Rng& rng) {
  Tensor<float> g(1, 1, h, w);
  for (auto& v : g.vec()) v = static_cast<float>(rng.uniform() * 2 - 1);
  return g;
}

}  // namespace

class FullWidthShapes : public ::testing::TestWithParam<std::pair<int, int>> {};

TEST_P(FullWidthShapes, EncodeDividesAndGenerateMultipliesBy16) {
  const auto [h, w] = GetParam();
  ModelConfig cfg;  // full widths: 768-channel feature
  ColorizationModel<float> model(cfg, 1);
  Rng rng(2);
  const auto c = model.embedding().forward(one_hot<float>({3}, cfg.num_classes));
  const auto f = model.encoder().forward(gray_input(h, w, rng), c, Mode::eval());
  EXPECT_EQ(f.shape(), (std::array<int, 4>{1, 768, h / 16, w / 16}));
  if (h * w > 64 * 64) return;  // full-width generation is checked at the smallest size only
  Tensor<float> z(1, cfg.z_dim(), 1, 1);
  const auto img = model.generator().forward(f, assemble_condition(z, c, cfg.chunk_count()), Mode::eval());
  EXPECT_EQ(img.shape(), (std::array<int, 4>{1, 3, h, w}));
}

INSTANTIATE_TEST_SUITE_P(Sizes, FullWidthShapes,
                         ::testing::Values(std::pair{64, 64}, std::pair{160, 160}, std::pair{256, 256},
                                           std::pair{512, 320}));

TEST(Shapes, DeskModelRoundTripsAllSizes) {
  const auto cfg = desk_model_config(2);
  ColorizationModel<float> model(cfg, 3);
  Rng rng(4);
  for (auto [h, w] : {std::pair{64, 64}, {160, 160}, {256, 256}, {512, 320}}) {
    Tensor<float> z(1, cfg.z_dim(), 1, 1);
    const auto out = model.forward(gray_input(h, w, rng), one_hot<float>({1}, 2), z, Mode::eval());
    EXPECT_EQ(out.feature.shape(), (std::array<int, 4>{1, 64, h / 16, w / 16}));
    EXPECT_EQ(out.image.shape(), (std::array<int, 4>{1, 3, h, w}));
    for (float v : out.image.vec()) ASSERT_TRUE(v >= -1.0f && v <= 1.0f);
  }
}

TEST(Shapes, FeatureResolutionVariants) {
  for (int res : {8, 16, 32, 64}) {
    auto cfg = desk_model_config(2);
    const int factor = 256 / res;
    cfg.encoder.downsample_factor = factor;
    const int ups = std::countr_zero(static_cast<unsigned>(factor));
    if (ups > 4) {
      cfg.encoder.channels.push_back(64);
      cfg.generator.channels.insert(cfg.generator.channels.begin(), 64);
    }
    ColorizationModel<float> model(cfg, 5);
    Rng rng(6);
    Tensor<float> z(1, cfg.z_dim(), 1, 1);
    const auto out = model.forward(gray_input(64, 64, rng), one_hot<float>({0}, 2), z, Mode::eval());
    EXPECT_EQ(out.feature.h(), 64 / factor) << res;
    EXPECT_EQ(out.image.shape(), (std::array<int, 4>{1, 3, 64, 64})) << res;
  }
}

TEST(Encoder, RejectsBadInput) {
  const auto cfg = desk_model_config(2);
  ColorizationModel<float> model(cfg, 7);
  Rng rng(8);
  const auto c = model.embedding().forward(one_hot<float>({0}, 2));
  EXPECT_THROW(model.encoder().forward(gray_input(60, 64, rng), c, Mode::eval()), std::invalid_argument);
  EXPECT_THROW(model.encoder().forward(Tensor<float>(1, 3, 64, 64), c, Mode::eval()), std::invalid_argument);
}

TEST(Generator, DifferentLatentsDiffer) {
  const auto cfg = desk_model_config(2);
  ColorizationModel<float> model(cfg, 9);
  Rng rng(10);
  const auto gray = gray_input(64, 64, rng);
  const auto cls = one_hot<float>({1}, 2);
  auto z_of = [&](std::uint64_t seed) {
    const auto v = sample_z<float>(seed, cfg.z_dim());
    Tensor<float> z(1, cfg.z_dim(), 1, 1);
    std::copy(v.begin(), v.end(), z.data());
    return z;
  };
  const auto a = model.forward(gray, cls, z_of(1), Mode::eval()).image;
  const auto b = model.forward(gray, cls, z_of(2), Mode::eval()).image;
  float diff = 0;
  for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(a[i] - b[i]));
  EXPECT_GT(diff, 0.0f);
  EXPECT_THROW(model.generator().forward(model.forward(gray, cls, z_of(1), Mode::eval()).feature,
                                         std::vector<Tensor<float>>(3), Mode::eval()),
               std::invalid_argument);
}

TEST(ConditionalNorm, ZeroAffineIsPlainBatchNorm) {
  Rng rng(11);
  nn::Norm2d<double> cbn(nn::NormKind::Conditional, 3, 4, rng);
  nn::Norm2d<double> bn(nn::NormKind::Plain, 3, 0, rng);
  cbn.gain().weight().value.zero();
  cbn.shift().weight().value.zero();
  const auto x = random_tensor(rng, 4, 3, 5, 5);
  const auto c = random_tensor(rng, 4, 4, 1, 1);
  const auto a = cbn.forward(x, c, frozen());
  const auto b = bn.forward(x, Tensor<double>(), frozen());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(ConditionalNorm, ConstantChannelGivesShift) {
  Rng rng(12);
  nn::Norm2d<double> cbn(nn::NormKind::Conditional, 2, 3, rng);
  cbn.running_mean()[0] = 0.7;
  cbn.running_mean()[1] = 0.7;
  Tensor<double> x(2, 2, 3, 3, 0.7);
  const auto c = random_tensor(rng, 2, 3, 1, 1);
  const auto y = cbn.forward(x, c, Mode::eval());
  const auto& wb = cbn.shift().weight().value;
  for (int n = 0; n < 2; ++n)
    for (int ch = 0; ch < 2; ++ch) {
      double beta = 0;
      for (int k = 0; k < 3; ++k) beta += wb.at(ch, k, 0, 0) * c[n * 3 + k];
      for (int i = 0; i < 9; ++i) EXPECT_NEAR(y.channel(n, ch)[i], beta, 1e-12);
    }
}

TEST(ConditionalNorm, MomentsFollowGainAndShift) {
  Rng rng(13);
  nn::Norm2d<double> cbn(nn::NormKind::Conditional, 2, 3, rng);
  const auto x = random_tensor(rng, 2, 2, 40, 40, 3.0);
  Tensor<double> c(2, 3, 1, 1, 0.0);
  for (int i = 0; i < 6; ++i) c[i] = 1.0;  // same code for both items
  const auto y = cbn.forward(x, c, frozen());
  const auto& wg = cbn.gain().weight().value;
  const auto& wb = cbn.shift().weight().value;
  for (int ch = 0; ch < 2; ++ch) {
    double g = 1, b = 0;
    for (int k = 0; k < 3; ++k) g += wg.at(ch, k, 0, 0), b += wb.at(ch, k, 0, 0);
    double s = 0, s2 = 0;
    for (int n = 0; n < 2; ++n)
      for (int i = 0; i < 1600; ++i) s += y.channel(n, ch)[i], s2 += y.channel(n, ch)[i] * y.channel(n, ch)[i];
    const double mean = s / 3200, sd = std::sqrt(s2 / 3200 - mean * mean);
    EXPECT_NEAR(mean, b, 1e-9);
    EXPECT_NEAR(sd, std::abs(g), 1e-5);
  }
}

TEST(Encoder, GradientCheck) {
  const auto cfg = tiny_config();
  Rng rng(14);
  Encoder<double> enc(cfg.encoder, cfg.class_dim, rng);
  auto x = random_tensor(rng, 2, 1, 8, 8);
  auto c = random_tensor(rng, 2, cfg.class_dim, 1, 1);
  const auto w = random_tensor(rng, 2, 8, 2, 2);
  enc.forward(x, c, frozen());
  nn::ParamRefs<double> ps;
  enc.params(ps, "");
  nn::zero_grads(ps);
  Tensor<double> dc;
  const auto dx = enc.backward(w, dc);
  auto loss = [&] { return gradcheck::project(enc.forward(x, c, frozen()), w); };
  EXPECT_GRAD_OK(gradcheck::check(x, dx, loss), "encoder input");
  EXPECT_GRAD_OK(gradcheck::check(c, dc, loss), "encoder class code");
  gradcheck::check_params(ps, loss, 6);
}

TEST(Encoder, GradientCheckWithDropout) {
  auto cfg = tiny_config();
  cfg.encoder.dropout_rate = 0.3;
  Rng rng(15);
  Encoder<double> enc(cfg.encoder, cfg.class_dim, rng);
  auto x = random_tensor(rng, 2, 1, 8, 8);
  auto c = random_tensor(rng, 2, cfg.class_dim, 1, 1);
  const auto w = random_tensor(rng, 2, 8, 2, 2);
  auto run = [&] {
    Rng drop(77);  // identical masks on every forward
    return enc.forward(x, c, nn::Mode{true, &drop, false});
  };
  run();
  Tensor<double> dc;
  const auto dx = enc.backward(w, dc);
  auto loss = [&] { return gradcheck::project(run(), w); };
  EXPECT_GRAD_OK(gradcheck::check(x, dx, loss), "encoder input with dropout");
}

TEST(Generator, GradientCheck) {
  const auto cfg = tiny_config();
  Rng rng(16);
  Generator<double> gen(cfg.generator, 8, 4, cfg.chunk_dim(), rng);
  gen.attention()->gamma().value[0] = 0.5;
  auto f = random_tensor(rng, 2, 8, 2, 2);
  std::vector<Tensor<double>> chunks;
  for (int k = 0; k < 2; ++k) chunks.push_back(random_tensor(rng, 2, cfg.chunk_dim(), 1, 1));
  const auto w = random_tensor(rng, 2, 3, 8, 8);
  gen.forward(f, chunks, frozen());
  nn::ParamRefs<double> ps;
  gen.params(ps, "");
  nn::zero_grads(ps);
  const auto df = gen.backward(w);
  const auto grads = gen.chunk_grads();
  auto loss = [&] { return gradcheck::project(gen.forward(f, chunks, frozen()), w); };
  EXPECT_GRAD_OK(gradcheck::check(f, df, loss), "generator feature");
  for (int k = 0; k < 2; ++k) EXPECT_GRAD_OK(gradcheck::check(chunks[k], grads[k], loss), "chunk " << k);
  gradcheck::check_params(ps, loss, 6);
}

TEST(Discriminator, ZeroInitScoresZero) {
  DiscriminatorConfig dc;
  dc.channels = {8, 8};
  dc.zero_init = true;
  Rng rng(17);
  Discriminator<double> d(dc, 3, rng);
  const auto s = d.forward(random_tensor(rng, 4, 3, 8, 8), one_hot<double>({0, 1, 2, 0}, 3), Mode::train(rng));
  for (double v : s.vec()) EXPECT_EQ(v, 0.0);
}

TEST(Discriminator, ProjectionIsBilinear) {
  DiscriminatorConfig dc;
  dc.channels = {8, 8};
  Rng rng(18);
  Discriminator<double> d(dc, 3, rng);
  const auto x = random_tensor(rng, 1, 3, 8, 8);
  const double s0 = d.forward(x, one_hot<double>({0}, 3), Mode::eval())[0];
  const double s2 = d.forward(x, one_hot<double>({2}, 3), Mode::eval())[0];
  const auto& e = d.embedding().value;
  const auto& feat = d.pooled_features();
  double expected = 0;
  for (int c = 0; c < d.feature_dim(); ++c) expected += (e.at(2, c, 0, 0) - e.at(0, c, 0, 0)) * feat[c];
  EXPECT_NEAR(s2 - s0, expected, 1e-10);
  EXPECT_THROW(d.forward(random_tensor(rng, 1, 3, 6, 8), one_hot<double>({0}, 3), Mode::eval()),
               std::invalid_argument);
}

TEST(Discriminator, GradientCheck) {
  DiscriminatorConfig dc;
  dc.channels = {4, 6};
  Rng rng(19);
  Discriminator<double> d(dc, 3, rng);
  auto x = random_tensor(rng, 2, 3, 8, 8);
  Tensor<double> v(2, 3, 1, 1);
  v[0] = 0.3, v[1] = 0.7, v[5] = 1.0;
  for (int i = 0; i < 500; ++i) d.forward(x, v, Mode::train(rng));  // settle the power iteration
  const auto w = random_tensor(rng, 2, 1, 1, 1);
  d.forward(x, v, frozen());
  nn::ParamRefs<double> ps;
  d.params(ps, "");
  nn::zero_grads(ps);
  const auto dx = d.backward(w);
  const auto dv = d.class_grad();
  auto loss = [&] { return gradcheck::project(d.forward(x, v, frozen()), w); };
  for (double g : dx.vec()) ASSERT_TRUE(std::isfinite(g));
  EXPECT_GRAD_OK(gradcheck::check(x, dx, loss), "discriminator image");
  EXPECT_GRAD_OK(gradcheck::check(v, dv, loss), "discriminator class");
  gradcheck::check_params(ps, loss, 8);
}

TEST(ColorizationModel, EndToEndGradientCheck) {
  const auto cfg = tiny_config();
  ColorizationModel<double> model(cfg, 20);
  model.generator().attention()->gamma().value[0] = 0.5;
  Rng rng(21);
  auto gray = random_tensor(rng, 2, 1, 8, 8);
  auto cls = one_hot<double>({0, 2}, 3);
  const auto z = random_tensor(rng, 2, cfg.z_dim(), 1, 1);
  const auto w = random_tensor(rng, 2, 3, 8, 8);
  model.forward(gray, cls, z, frozen());
  auto ps = model.params();
  nn::zero_grads(ps);
  const auto dgray = model.backward(w);
  auto loss = [&] { return gradcheck::project(model.forward(gray, cls, z, frozen()).image, w); };
  EXPECT_GRAD_OK(gradcheck::check(gray, dgray, loss), "model input");
  gradcheck::check_params(ps, loss, 5);
}
