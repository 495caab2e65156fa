#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "bigcolor/training.hpp"
#include "gradcheck.hpp"

using namespace bigcolor;
namespace fs = std::filesystem;

namespace {

ModelConfig small_model() {
  auto m = desk_model_config(2);
  m.encoder.channels = {8, 8, 12, 12, 16};
  m.generator.channels = {16, 12, 8, 8};
  m.discriminator.channels = {8, 8, 12, 16};
  m.extractor.stage_channels = {4, 4, 8, 8, 8};
  return m;
}

TrainConfig small_train() {
  auto t = desk_train_config();
  t.image_size = 16;
  t.batch_size = 2;
  t.seed = 11;
  return t;
}

template <typename T>
struct Batch {
  Tensor<T> rgb, cls;
};

template <typename T>
Batch<T> make_batch(int index, int n = 2, int size = 16) {
  Rng rng(1000 + static_cast<std::uint64_t>(index));
  Batch<T> b{Tensor<T>(n, 3, size, size), Tensor<T>()};
  for (auto& v : b.rgb.vec()) v = static_cast<T>(rng.uniform());
  std::vector<int> labels;
  for (int i = 0; i < n; ++i) labels.push_back(static_cast<int>(rng.below(2)));
  b.cls = one_hot<T>(labels, 2);
  return b;
}

std::vector<unsigned char> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct TempDir {
  fs::path path;
  TempDir() : path(fs::temp_directory_path() / ("bigcolor_train_" + std::to_string(::getpid()))) {
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST(Ema, ClosedForm) {
  Tensor<double> shadow(1, 1, 1, 1), live(1, 1, 1, 1, 1.0);
  for (int k = 1; k <= 2000; ++k) {
    optim::ema_update(shadow, live, 0.999);
    if (k == 1 || k == 10 || k == 100 || k == 2000) {
      EXPECT_NEAR(shadow[0], 1.0 - std::pow(0.999, k), 1e-12) << k;
    }
  }
}

TEST(Ema, FixedPointAndZeroBeta) {
  Rng rng(1);
  auto a = gradcheck::random_tensor(rng, 1, 4, 2, 2);
  const auto b = gradcheck::random_tensor(rng, 1, 4, 2, 2);
  auto same = a;
  optim::ema_update(same, a, 0.999);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(same[i], a[i], 1e-15);
  optim::ema_update(a, b, 0.0);
  EXPECT_EQ(a, b);
  EXPECT_THROW(optim::ema_update(a, Tensor<double>(1, 4, 2, 1), 0.5), std::invalid_argument);
}

TEST(Ema, TrainerShadowFollowsLive) {
  Trainer<double> t(small_model(), small_train());
  std::vector<Tensor<double>> before;
  for (auto& [n, p] : t.ema().params()) before.push_back(p->value);
  auto b = make_batch<double>(0);
  t.train_step(b.rgb, b.cls);
  auto live = t.live().params();
  auto shadow = t.ema().params();
  for (std::size_t i = 0; i < live.size(); ++i)
    for (std::size_t j = 0; j < before[i].size(); ++j)
      ASSERT_NEAR(shadow[i].second->value[j], 0.999 * before[i][j] + 0.001 * live[i].second->value[j], 1e-12)
          << shadow[i].first;
}

TEST(LrDecay, PerEpoch) {
  auto cfg = small_train();
  cfg.lr_gen = 1e-4;
  Trainer<float> t(small_model(), cfg);
  t.epoch_end();
  EXPECT_NEAR(t.lr_gen(), 9e-5, 1e-20);
  EXPECT_NEAR(t.lr_disc(), 0.9 * 3e-5, 1e-20);
  for (int e = 1; e < 12; ++e) t.epoch_end();
  EXPECT_EQ(t.epoch(), 12);
  EXPECT_NEAR(t.lr_gen(), 1e-4 * std::pow(0.9, 12), 1e-18);
  EXPECT_NEAR(t.lr_gen(), 2.824e-5, 1e-8);

  cfg.lr_decay_per_epoch = 1.0;
  Trainer<float> flat(small_model(), cfg);
  for (int e = 0; e < 5; ++e) flat.epoch_end();
  EXPECT_EQ(flat.lr_gen(), 1e-4);
}

TEST(TrainStep, ZeroInitDiscriminatorGivesHingeTwo) {
  auto m = small_model();
  m.discriminator.zero_init = true;
  Trainer<float> t(m, small_train());
  auto b = make_batch<float>(0);
  const auto r = t.train_step(b.rgb, b.cls);
  EXPECT_EQ(r.disc, 2.0);
  EXPECT_EQ(r.gen_adv, -0.0);
}

TEST(TrainStep, TotalIsWeightedSum) {
  Trainer<float> t(small_model(), small_train());
  for (int i = 0; i < 3; ++i) {
    auto b = make_batch<float>(i);
    const auto r = t.train_step(b.rgb, b.cls);
    EXPECT_EQ(r.total_gen, r.mse + 0.2 * r.perceptual + 0.03 * r.gen_adv);
    EXPECT_GT(r.perceptual, 0.0);
  }
  EXPECT_EQ(t.step(), 3);
}

TEST(TrainStep, RejectsBadBatches) {
  Trainer<float> t(small_model(), small_train());
  auto b = make_batch<float>(0);
  EXPECT_THROW(t.train_step(Tensor<float>(0, 3, 16, 16), Tensor<float>(0, 2, 1, 1)), std::invalid_argument);
  EXPECT_THROW(t.train_step(b.rgb, one_hot<float>({0}, 2)), std::invalid_argument);
  EXPECT_THROW(t.train_step(Tensor<float>(2, 1, 16, 16), b.cls), std::invalid_argument);
}

TEST(TrainStep, BitwiseDeterministic) {
  Trainer<float> a(small_model(), small_train()), b(small_model(), small_train());
  for (int i = 0; i < 10; ++i) {
    auto batch = make_batch<float>(i);
    EXPECT_EQ(a.train_step(batch.rgb, batch.cls), b.train_step(batch.rgb, batch.cls)) << "step " << i;
  }
  EXPECT_EQ(a.to_archive().serialize(), b.to_archive().serialize());
}

TEST(TrainStep, SeedChangesRun) {
  auto cfg = small_train();
  Trainer<float> a(small_model(), cfg);
  cfg.seed = 12;
  Trainer<float> b(small_model(), cfg);
  auto batch = make_batch<float>(0);
  EXPECT_NE(a.train_step(batch.rgb, batch.cls), b.train_step(batch.rgb, batch.cls));
}

TEST(TrainStep, AdversarialOffLeavesDiscriminatorAlone) {
  auto cfg = small_train();
  cfg.adversarial = false;
  Trainer<float> t(small_model(), cfg);
  nn::ParamRefs<float> ps;
  t.discriminator().params(ps, "");
  std::vector<Tensor<float>> before;
  for (auto& [n, p] : ps) before.push_back(p->value);
  auto b = make_batch<float>(0);
  const auto r = t.train_step(b.rgb, b.cls);
  EXPECT_EQ(r.disc, 0.0);
  EXPECT_EQ(r.gen_adv, 0.0);
  EXPECT_EQ(r.total_gen, r.mse + 0.2 * r.perceptual);
  for (std::size_t i = 0; i < ps.size(); ++i) EXPECT_EQ(ps[i].second->value, before[i]);
}

TEST(TrainStep, AugmentationPlacementsRun) {
  for (bool disc : {false, true})
    for (bool gen : {false, true}) {
      auto cfg = small_train();
      cfg.aug_on_disc_real = disc;
      cfg.aug_on_gen_output = gen;
      Trainer<float> t(small_model(), cfg);
      auto b = make_batch<float>(0);
      const auto r = t.train_step(b.rgb, b.cls);
      EXPECT_TRUE(std::isfinite(r.total_gen) && std::isfinite(r.disc)) << disc << gen;
    }
}

TEST(TrainStep, NonFiniteInputRejected) {
  Trainer<float> t(small_model(), small_train());
  auto bad = make_batch<float>(1);
  bad.rgb[5] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(t.train_step(bad.rgb, bad.cls), std::invalid_argument);
  EXPECT_EQ(t.step(), 0);
}

TEST(TrainStep, NonFiniteLossAbortsWithoutChanges) {
  Trainer<float> t(small_model(), small_train());
  auto good = make_batch<float>(0);
  t.train_step(good.rgb, good.cls);
  const auto before = t.to_archive().serialize();
  // Poison the perceptual extractor: the loss turns NaN after D has already
  // been updated in this step, so the rollback has real work to do.
  auto* vgg = dynamic_cast<VggExtractor<float>*>(t.extractor());
  ASSERT_NE(vgg, nullptr);
  vgg->conv(0).weight().value[0] = std::numeric_limits<float>::quiet_NaN();
  auto b = make_batch<float>(1);
  try {
    t.train_step(b.rgb, b.cls);
    FAIL() << "expected NonFiniteLoss";
  } catch (const NonFiniteLoss& e) {
    EXPECT_EQ(e.term(), "perceptual");
    EXPECT_NE(std::string(e.what()).find("perceptual"), std::string::npos);
  }
  EXPECT_EQ(t.to_archive().serialize(), before);
  EXPECT_EQ(t.step(), 1);
}

TEST(TrainStep, NonFiniteDiscriminatorScoresNamed) {
  Trainer<float> t(small_model(), small_train());
  nn::ParamRefs<float> ps;
  t.discriminator().params(ps, "");
  ps.back().second->value[0] = std::numeric_limits<float>::infinity();
  const auto before = t.to_archive().serialize();
  auto b = make_batch<float>(0);
  try {
    t.train_step(b.rgb, b.cls);
    FAIL() << "expected NonFiniteLoss";
  } catch (const NonFiniteLoss& e) {
    EXPECT_EQ(e.term(), "discriminator");
  }
  EXPECT_EQ(t.to_archive().serialize(), before);
}

TEST(ChromaScaleOp, GradientCheck) {
  Rng rng(2);
  auto x = gradcheck::random_tensor(rng, 2, 3, 3, 3, 0.3);
  const auto w = gradcheck::random_tensor(rng, 2, 3, 3, 3);
  ChromaScaleOp<double> op(1.2);
  op.forward(x);
  const auto dx = op.backward(w);
  EXPECT_GRAD_OK(gradcheck::check(x, dx, [&] { return gradcheck::project(op.forward(x), w); }), "chroma scale");
}

TEST(ChromaScaleOp, MatchesChromaAugment) {
  Rng rng(3);
  Tensor<double> rgb(1, 3, 4, 4);
  for (auto& v : rgb.vec()) v = 0.2 + 0.6 * rng.uniform();
  ChromaScaleOp<double> op(1.2);
  const auto y = op.forward(to_network_range(rgb));
  const auto ref = to_network_range(colorspace::chroma_augment(rgb, 1.2));
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  TempDir dir;
  Trainer<float> t(small_model(), small_train());
  for (int i = 0; i < 3; ++i) {
    auto b = make_batch<float>(i);
    t.train_step(b.rgb, b.cls);
  }
  t.epoch_end();
  t.save_checkpoint(dir.path / "a.ckpt");
  auto loaded = Trainer<float>::load_checkpoint(dir.path / "a.ckpt");
  loaded->save_checkpoint(dir.path / "b.ckpt");
  EXPECT_EQ(read_bytes(dir.path / "a.ckpt"), read_bytes(dir.path / "b.ckpt"));
  EXPECT_EQ(loaded->step(), 3);
  EXPECT_EQ(loaded->epoch(), 1);
  EXPECT_EQ(loaded->lr_gen(), t.lr_gen());
}

TEST(Checkpoint, ResumeReproducesUnbrokenRun) {
  TempDir dir;
  Trainer<float> full(small_model(), small_train());
  Trainer<float> first(small_model(), small_train());
  for (int i = 0; i < 10; ++i) {
    auto b = make_batch<float>(i);
    full.train_step(b.rgb, b.cls);
    first.train_step(b.rgb, b.cls);
  }
  first.save_checkpoint(dir.path / "mid.ckpt");
  auto resumed = Trainer<float>::load_checkpoint(dir.path / "mid.ckpt");
  for (int i = 10; i < 15; ++i) {
    auto b = make_batch<float>(i);
    EXPECT_EQ(full.train_step(b.rgb, b.cls), resumed->train_step(b.rgb, b.cls)) << "step " << i;
  }
  EXPECT_EQ(full.to_archive().serialize(), resumed->to_archive().serialize());
}

TEST(Checkpoint, TruncatedFileIsRejected) {
  TempDir dir;
  Trainer<float> t(small_model(), small_train());
  t.save_checkpoint(dir.path / "full.ckpt");
  auto bytes = read_bytes(dir.path / "full.ckpt");
  for (std::size_t keep : {bytes.size() - 1, bytes.size() / 2, std::size_t{10}}) {
    std::ofstream(dir.path / "cut.ckpt", std::ios::binary)
        .write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(keep));
    EXPECT_THROW(Trainer<float>::load_checkpoint(dir.path / "cut.ckpt"), ArchiveError) << keep;
  }
  bytes[bytes.size() / 2] ^= 0x40;
  std::ofstream(dir.path / "flip.ckpt", std::ios::binary)
      .write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  EXPECT_THROW(Trainer<float>::load_checkpoint(dir.path / "flip.ckpt"), ArchiveError);
}

TEST(Checkpoint, InferenceModelReadsEmaWeights) {
  TempDir dir;
  Trainer<float> t(small_model(), small_train());
  for (int i = 0; i < 2; ++i) {
    auto b = make_batch<float>(i);
    t.train_step(b.rgb, b.cls);
  }
  t.save_checkpoint(dir.path / "m.ckpt");
  auto model = load_inference_model<float>(dir.path / "m.ckpt");
  auto loaded = model->params();
  auto ema = t.ema().params();
  auto live = t.live().params();
  ASSERT_EQ(loaded.size(), ema.size());
  bool differs_from_live = false;
  for (std::size_t i = 0; i < ema.size(); ++i) {
    EXPECT_EQ(loaded[i].second->value, ema[i].second->value) << ema[i].first;
    differs_from_live |= !(loaded[i].second->value == live[i].second->value);
  }
  EXPECT_TRUE(differs_from_live);
}

TEST(Config, JsonRoundTripAndUnknownKeys) {
  RunConfig cfg;
  cfg.model = small_model();
  cfg.train = small_train();
  const nlohmann::json j = cfg;
  const auto back = parse_run_config(j);
  EXPECT_EQ(nlohmann::json(back), j);
  auto bad = j;
  bad["train"]["lr_gen_typo"] = 1;
  EXPECT_THROW(parse_run_config(bad), std::invalid_argument);
  auto neg = j;
  neg["train"]["lr_gen"] = -1;
  EXPECT_THROW(parse_run_config(neg), std::invalid_argument);
  auto ds = j;
  ds["model"]["encoder"]["downsample_factor"] = 12;
  EXPECT_THROW(parse_run_config(ds), std::invalid_argument);
}
