#pragma once

#include <cmath>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "bigcolor/archive.hpp"
#include "bigcolor/colorspace.hpp"
#include "bigcolor/config.hpp"
#include "bigcolor/discriminator.hpp"
#include "bigcolor/feature_extractor.hpp"
#include "bigcolor/losses.hpp"
#include "bigcolor/model.hpp"
#include "bigcolor/optim.hpp"

namespace bigcolor {

/// Raised when a loss term is NaN/Inf; the step is rolled back.
class NonFiniteLoss : public std::runtime_error {
 public:
  NonFiniteLoss(const std::string& term, double value)
      : std::runtime_error("non-finite " + term + " loss (" + std::to_string(value) + "); step aborted"), term_(term) {}
  const std::string& term() const { return term_; }

 private:
  std::string term_;
};

/// Chroma scaling applied inside the graph (network range, clamped to
/// [-1, 1]); used when the augmentation is placed on the generator output.
template <typename T>
class ChromaScaleOp {
 public:
  explicit ChromaScaleOp(double factor) : m_(colorspace::chroma_scale_matrix(factor)) {}

  Tensor<T> forward(const Tensor<T>& x) {
    mask_ = Tensor<T>::like(x);
    Tensor<T> y = Tensor<T>::like(x);
    for (int n = 0; n < x.n(); ++n)
      for (std::size_t i = 0; i < x.plane(); ++i) {
        const std::array<double, 3> p{double(x.channel(n, 0)[i]), double(x.channel(n, 1)[i]), double(x.channel(n, 2)[i])};
        const auto q = colorspace::apply(m_, p);
        for (int c = 0; c < 3; ++c) {
          const bool inside = q[c] > -1.0 && q[c] < 1.0;
          y.channel(n, c)[i] = static_cast<T>(std::clamp(q[c], -1.0, 1.0));
          mask_.channel(n, c)[i] = inside ? T(1) : T(0);
        }
      }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) const {
    Tensor<T> dx = Tensor<T>::like(dy);
    for (int n = 0; n < dy.n(); ++n)
      for (std::size_t i = 0; i < dy.plane(); ++i)
        for (int k = 0; k < 3; ++k) {
          double s = 0;
          for (int c = 0; c < 3; ++c) s += m_[c][k] * mask_.channel(n, c)[i] * dy.channel(n, c)[i];
          dx.channel(n, k)[i] = static_cast<T>(s);
        }
    return dx;
  }

 private:
  colorspace::Mat3 m_;
  Tensor<T> mask_;
};

/// Builds the perceptual feature extractor for a model config, loading
/// pretrained weights when a weight file is configured.
template <typename T>
std::unique_ptr<FeatureExtractor<T>> make_extractor(const ExtractorConfig& cfg) {
  auto vgg = std::make_unique<VggExtractor<T>>(cfg);
  if (!cfg.weights.empty()) {
    const Archive ar = Archive::load(cfg.weights);
    nn::ParamRefs<T> ps;
    vgg->params(ps, "");
    for (auto& [name, p] : ps) {
      Tensor<T> t = ar.get<T>(name);
      if (t.shape() != p->value.shape())
        throw ArchiveError("extractor weight '" + name + "' has shape " + t.shape_string() + ", expected " +
                           p->value.shape_string());
      p->value = std::move(t);
    }
  }
  return vgg;
}

/// Alternating adversarial trainer. Owns the whole training state: live
/// A/E/G and D, the EMA shadow of A/E/G, both Adam optimizers, the RNG and
/// the step/epoch counters.
template <typename T>
class Trainer {
 public:
  Trainer(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
          std::unique_ptr<FeatureExtractor<T>> extractor = nullptr)
      : model_cfg_(model_cfg), cfg_(train_cfg), rng_(train_cfg.seed * 0x9E3779B97F4A7C15ull + 2) {
    model_cfg_.validate();
    cfg_.validate();
    live_ = std::make_unique<ColorizationModel<T>>(model_cfg_, cfg_.seed);
    shadow_ = std::make_unique<ColorizationModel<T>>(model_cfg_, cfg_.seed);
    Rng drng(cfg_.seed * 0x9E3779B97F4A7C15ull + 1);
    disc_ = std::make_unique<Discriminator<T>>(model_cfg_.discriminator, model_cfg_.num_classes, drng);
    import_pretrained_weights();
    copy_live_to_shadow();

    extractor_ = std::move(extractor);
    if (!extractor_ && cfg_.lambda_per > 0) extractor_ = make_extractor<T>(model_cfg_.extractor);

    gen_params_ = live_->params();
    disc_params_.clear();
    disc_->params(disc_params_, "");
    adam_gen_ = optim::Adam<T>(gen_params_, {cfg_.lr_gen, cfg_.adam_beta1, cfg_.adam_beta2, cfg_.adam_eps});
    adam_disc_ = optim::Adam<T>(disc_params_, {cfg_.lr_disc, cfg_.adam_beta1, cfg_.adam_beta2, cfg_.adam_eps});
  }

  /// One D update followed by one E+G(+A) update and an EMA step.
  /// rgb: (N x 3 x H x W) in [0, 1]; class_vec: (N x K).
  losses::LossReport train_step(const Tensor<T>& rgb, const Tensor<T>& class_vec) {
    if (rgb.n() < 1) throw std::invalid_argument("train_step: empty batch");
    if (rgb.c() != 3) throw std::invalid_argument("train_step: expected RGB batch, got " + rgb.shape_string());
    if (class_vec.n() != rgb.n() || static_cast<int>(class_vec.item_size()) != model_cfg_.num_classes)
      throw std::invalid_argument("train_step: class batch " + class_vec.shape_string() + " inconsistent with images");
    const int N = rgb.n();
    Backup backup = take_backup();
    try {
      return step_impl(rgb, class_vec, N);
    } catch (const NonFiniteLoss&) {
      restore(backup);
      throw;
    }
  }

  /// Learning-rate decay and epoch counter.
  void epoch_end() {
    adam_gen_.set_lr(adam_gen_.lr() * cfg_.lr_decay_per_epoch);
    adam_disc_.set_lr(adam_disc_.lr() * cfg_.lr_decay_per_epoch);
    ++epoch_;
  }

  // -- checkpointing ------------------------------------------------------

  Archive to_archive() {
    Archive ar;
    ar.meta["format"] = "bigcolor-checkpoint";
    ar.meta["model"] = model_cfg_;
    ar.meta["train"] = cfg_;
    ar.meta["step"] = step_;
    ar.meta["epoch"] = epoch_;
    ar.meta["lr_gen"] = adam_gen_.lr();
    ar.meta["lr_disc"] = adam_disc_.lr();
    ar.meta["adam_gen_steps"] = adam_gen_.steps();
    ar.meta["adam_disc_steps"] = adam_disc_.steps();
    ar.meta["rng"] = rng_.serialize();
    ar.meta["scalar"] = sizeof(T) == 4 ? "f32" : "f64";
    live_->save(ar, "live");
    shadow_->save(ar, "ema");
    for (auto& [name, p] : disc_params_) ar.put(nn::join("disc", name), p->value);
    for (auto& [name, b] : disc_buffers()) ar.put(nn::join("disc", name), *b);
    put_moments(ar, "adam_gen", adam_gen_);
    put_moments(ar, "adam_disc", adam_disc_);
    return ar;
  }

  void save_checkpoint(const std::filesystem::path& path) { to_archive().save(path); }

  static std::unique_ptr<Trainer> from_archive(const Archive& ar, std::unique_ptr<FeatureExtractor<T>> extractor = nullptr) {
    if (ar.meta.value("format", "") != "bigcolor-checkpoint") throw ArchiveError("not a training checkpoint");
    ModelConfig mc = ar.meta.at("model").get<ModelConfig>();
    TrainConfig tc = ar.meta.at("train").get<TrainConfig>();
    // Imports were applied when the run started; the checkpoint supersedes them.
    tc.pretrained_generator.clear();
    tc.pretrained_discriminator.clear();
    tc.pretrained_embedding.clear();
    auto t = std::make_unique<Trainer>(mc, tc, std::move(extractor));
    t->cfg_ = ar.meta.at("train").get<TrainConfig>();
    t->step_ = ar.meta.at("step").get<long long>();
    t->epoch_ = ar.meta.at("epoch").get<int>();
    t->adam_gen_.set_lr(ar.meta.at("lr_gen").get<double>());
    t->adam_disc_.set_lr(ar.meta.at("lr_disc").get<double>());
    t->adam_gen_.set_steps(ar.meta.at("adam_gen_steps").get<long long>());
    t->adam_disc_.set_steps(ar.meta.at("adam_disc_steps").get<long long>());
    t->rng_ = Rng::deserialize(ar.meta.at("rng").get<std::string>());
    t->live_->load(ar, "live");
    t->shadow_->load(ar, "ema");
    for (auto& [name, p] : t->disc_params_) assign(ar, nn::join("disc", name), p->value);
    for (auto& [name, b] : t->disc_buffers()) assign(ar, nn::join("disc", name), *b);
    get_moments(ar, "adam_gen", t->adam_gen_);
    get_moments(ar, "adam_disc", t->adam_disc_);
    return t;
  }

  static std::unique_ptr<Trainer> load_checkpoint(const std::filesystem::path& path,
                                                  std::unique_ptr<FeatureExtractor<T>> extractor = nullptr) {
    return from_archive(Archive::load(path), std::move(extractor));
  }

  // -- accessors ------------------------------------------------------------

  ColorizationModel<T>& live() { return *live_; }
  /// EMA shadow: the weights evaluation and inference use.
  ColorizationModel<T>& ema() { return *shadow_; }
  Discriminator<T>& discriminator() { return *disc_; }
  const ModelConfig& model_config() const { return model_cfg_; }
  const TrainConfig& train_config() const { return cfg_; }
  long long step() const { return step_; }
  int epoch() const { return epoch_; }
  double lr_gen() const { return adam_gen_.lr(); }
  double lr_disc() const { return adam_disc_.lr(); }
  Rng& rng() { return rng_; }
  FeatureExtractor<T>* extractor() { return extractor_.get(); }

 private:
  losses::LossReport step_impl(const Tensor<T>& rgb, const Tensor<T>& class_vec, int N) {
    const Tensor<T> x = to_network_range(rgb);
    const Tensor<T> gray = to_network_range(colorspace::rgb_to_gray(rgb));
    const Tensor<T> z = sample_z_batch<T>(rng_, N, model_cfg_.z_dim());
    const nn::Mode mode = nn::Mode::train(rng_);

    auto fwd = live_->forward(gray, class_vec, z, mode);
    std::optional<ChromaScaleOp<T>> gen_aug;
    Tensor<T> fake = fwd.image;
    if (cfg_.aug_on_gen_output) {
      gen_aug.emplace(cfg_.aug_factor);
      fake = gen_aug->forward(fwd.image);
    }

    losses::LossReport report;
    const losses::LossWeights weights{cfg_.lambda_per, cfg_.adversarial ? cfg_.lambda_adv : 0.0};

    if (cfg_.adversarial) {
      const Tensor<T> real = cfg_.aug_on_disc_real
                                 ? to_network_range(colorspace::chroma_augment(rgb, cfg_.aug_factor))
                                 : x;
      Tensor<T> scores = disc_->forward(concat_batch(real, fake), concat_batch(class_vec, class_vec), mode);
      auto hinge = losses::disc_hinge_loss(slice_batch(scores, 0, N), slice_batch(scores, N, 2 * N));
      if (!std::isfinite(hinge.value)) throw NonFiniteLoss("discriminator", hinge.value);
      report.disc = hinge.value;
      adam_disc_.zero_grad();
      disc_->backward(concat_batch(hinge.grad_real, hinge.grad_fake));
      adam_disc_.step();
    }

    auto mse = losses::mse_loss_grad(fake, x);
    report.mse = mse.value;
    Tensor<T> dfake = mse.grad;
    if (weights.lambda_per > 0) {
      auto per = losses::perceptual_loss_grad(fake, x, extractor_.get());
      report.perceptual = per.value;
      axpy(dfake, per.grad, weights.lambda_per);
    }
    if (cfg_.adversarial) {
      Tensor<T> s = disc_->forward(fake, class_vec, mode);
      auto adv = losses::gen_adv_loss(s);
      report.gen_adv = adv.value;
      Tensor<T> dadv = disc_->backward(adv.grad);
      adam_disc_.zero_grad();  // D is not updated by the generator step
      axpy(dfake, dadv, weights.lambda_adv);
    }
    report.total_gen = losses::combine(report.mse, report.perceptual, report.gen_adv, weights);
    if (!std::isfinite(report.mse)) throw NonFiniteLoss("mse", report.mse);
    if (!std::isfinite(report.perceptual)) throw NonFiniteLoss("perceptual", report.perceptual);
    if (!std::isfinite(report.gen_adv)) throw NonFiniteLoss("adversarial", report.gen_adv);

    if (gen_aug) dfake = gen_aug->backward(dfake);
    adam_gen_.zero_grad();
    live_->backward(dfake);
    adam_gen_.step();
    update_shadow();
    ++step_;
    return report;
  }

  static void axpy(Tensor<T>& y, const Tensor<T>& x, double a) {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += static_cast<T>(a * x[i]);
  }

  void update_shadow() {
    auto live_p = live_->params();
    auto shadow_p = shadow_->params();
    for (std::size_t i = 0; i < live_p.size(); ++i)
      optim::ema_update(shadow_p[i].second->value, live_p[i].second->value, cfg_.ema_beta);
    // Normalization statistics are copied, not averaged.
    auto live_b = live_->buffers();
    auto shadow_b = shadow_->buffers();
    for (std::size_t i = 0; i < live_b.size(); ++i) *shadow_b[i].second = *live_b[i].second;
  }

  void copy_live_to_shadow() {
    auto live_p = live_->params();
    auto shadow_p = shadow_->params();
    for (std::size_t i = 0; i < live_p.size(); ++i) shadow_p[i].second->value = live_p[i].second->value;
    auto live_b = live_->buffers();
    auto shadow_b = shadow_->buffers();
    for (std::size_t i = 0; i < live_b.size(); ++i) *shadow_b[i].second = *live_b[i].second;
  }

  void import_pretrained_weights() {
    const bool any = !cfg_.pretrained_generator.empty() || !cfg_.pretrained_discriminator.empty() ||
                     !cfg_.pretrained_embedding.empty();
    if (!any) return;
    if (cfg_.pretrained_mapping.empty())
      throw std::invalid_argument("pretrained weights given without pretrained_mapping");
    const auto mapping = load_name_mapping(cfg_.pretrained_mapping);
    auto gen = live_->params();
    if (!cfg_.pretrained_generator.empty())
      import_pretrained(gen, Archive::load(cfg_.pretrained_generator), mapping, "generator");
    if (!cfg_.pretrained_embedding.empty())
      import_pretrained(gen, Archive::load(cfg_.pretrained_embedding), mapping, "embedding");
    if (!cfg_.pretrained_discriminator.empty()) {
      nn::ParamRefs<T> dp;
      disc_->params(dp, "discriminator");
      import_pretrained(dp, Archive::load(cfg_.pretrained_discriminator), mapping, "discriminator");
    }
  }

  nn::BufferRefs<T> disc_buffers() {
    nn::BufferRefs<T> out;
    disc_->buffers(out, "");
    return out;
  }

  static void assign(const Archive& ar, const std::string& name, Tensor<T>& dst) {
    Tensor<T> t = ar.get<T>(name);
    if (t.shape() != dst.shape()) throw ArchiveError("checkpoint tensor '" + name + "' has unexpected shape");
    dst = std::move(t);
  }

  static void put_moments(Archive& ar, const std::string& prefix, optim::Adam<T>& opt) {
    const auto& ps = opt.params();
    for (std::size_t i = 0; i < ps.size(); ++i) {
      ar.put(prefix + "/m/" + ps[i].first, opt.first_moments()[i]);
      ar.put(prefix + "/v/" + ps[i].first, opt.second_moments()[i]);
    }
  }
  static void get_moments(const Archive& ar, const std::string& prefix, optim::Adam<T>& opt) {
    const auto& ps = opt.params();
    for (std::size_t i = 0; i < ps.size(); ++i) {
      assign(ar, prefix + "/m/" + ps[i].first, opt.first_moments()[i]);
      assign(ar, prefix + "/v/" + ps[i].first, opt.second_moments()[i]);
    }
  }

  struct Backup {
    std::vector<Tensor<T>> disc_values, disc_m, disc_v, buffers;
    long long disc_steps = 0;
    Rng rng;
  };

  Backup take_backup() {
    Backup b;
    for (auto& [n, p] : disc_params_) b.disc_values.push_back(p->value);
    b.disc_m = adam_disc_.first_moments();
    b.disc_v = adam_disc_.second_moments();
    b.disc_steps = adam_disc_.steps();
    for (auto& [n, t] : all_buffers()) b.buffers.push_back(*t);
    b.rng = rng_;
    return b;
  }

  void restore(Backup& b) {
    for (std::size_t i = 0; i < disc_params_.size(); ++i) disc_params_[i].second->value = b.disc_values[i];
    adam_disc_.first_moments() = b.disc_m;
    adam_disc_.second_moments() = b.disc_v;
    adam_disc_.set_steps(b.disc_steps);
    auto bufs = all_buffers();
    for (std::size_t i = 0; i < bufs.size(); ++i) *bufs[i].second = b.buffers[i];
    rng_ = b.rng;
  }

  nn::BufferRefs<T> all_buffers() {
    auto out = live_->buffers();
    for (auto& b : disc_buffers()) out.push_back(b);
    return out;
  }

  ModelConfig model_cfg_;
  TrainConfig cfg_;
  Rng rng_;
  std::unique_ptr<ColorizationModel<T>> live_, shadow_;
  std::unique_ptr<Discriminator<T>> disc_;
  std::unique_ptr<FeatureExtractor<T>> extractor_;
  nn::ParamRefs<T> gen_params_, disc_params_;
  optim::Adam<T> adam_gen_, adam_disc_;
  long long step_ = 0;
  int epoch_ = 0;
};

/// EMA weights of a training checkpoint as a standalone inference model.
template <typename T>
std::unique_ptr<ColorizationModel<T>> load_inference_model(const std::filesystem::path& path) {
  const Archive ar = Archive::load(path);
  if (ar.meta.value("format", "") != "bigcolor-checkpoint") throw ArchiveError(path.string() + ": not a checkpoint");
  auto model = std::make_unique<ColorizationModel<T>>(ar.meta.at("model").get<ModelConfig>());
  model->load(ar, "ema");
  return model;
}

}  // namespace bigcolor
