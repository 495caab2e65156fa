#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <json.hpp>
#include <stdexcept>
#include <string>
#include <vector>

#include "bigcolor/nn/norm.hpp"

namespace bigcolor {

struct EncoderConfig {
  std::vector<int> channels{96, 192, 384, 576, 768};
  double dropout_rate = 0.2;
  std::string norm = "cbn";  // cbn | bn | none
  bool use_residual = true;
  int downsample_factor = 16;
  /// Dropout after every block instead of every block but the last.
  bool dropout_in_last_block = false;

  int block_count() const { return static_cast<int>(channels.size()); }
  int pooling_blocks() const { return std::countr_zero(static_cast<unsigned>(downsample_factor)); }
  int feature_channels() const { return channels.empty() ? 0 : channels.back(); }
};

struct GeneratorConfig {
  /// Output channels of each conditional block (input is the feature map).
  std::vector<int> channels{768, 384, 192, 96};
  /// Block index after which the self-attention block runs; -1 disables it.
  int attention_stage = 1;

  int block_count() const { return static_cast<int>(channels.size()); }
};

struct DiscriminatorConfig {
  /// Output channels of each downsampling block.
  std::vector<int> channels{96, 192, 384, 768, 768, 1536};
  bool spectral_norm = true;
  /// Start with all weights zero (scores are exactly 0).
  bool zero_init = false;
};

/// Tiny VGG-style extractor used by the perceptual loss when no pretrained
/// weights are supplied. Conv counts per stage follow VGG16 (2, 2, 3, 3, 3).
struct ExtractorConfig {
  std::vector<int> stage_channels{64, 128, 256, 512, 512};
  std::vector<int> taps{1, 2, 6, 9};
  std::string weights;  // optional archive with pretrained VGG16 weights
  std::uint64_t seed = 1234;
};

struct ModelConfig {
  int num_classes = 1000;
  int class_dim = 128;
  int z_chunk_dim = 17;
  double embedding_init_std = 0.02;
  EncoderConfig encoder;
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;
  ExtractorConfig extractor;

  int chunk_count() const { return generator.block_count(); }
  int z_dim() const { return z_chunk_dim * chunk_count(); }
  int chunk_dim() const { return z_chunk_dim + class_dim; }

  void validate() const {
    if (num_classes < 1) throw std::invalid_argument("model: num_classes must be >= 1");
    if (class_dim < 1 || z_chunk_dim < 1) throw std::invalid_argument("model: class_dim and z_chunk_dim must be >= 1");
    const auto& e = encoder;
    if (e.channels.empty()) throw std::invalid_argument("encoder: channels must not be empty");
    for (int c : e.channels)
      if (c < 1) throw std::invalid_argument("encoder: channel counts must be positive");
    if (e.downsample_factor < 1 || !std::has_single_bit(static_cast<unsigned>(e.downsample_factor)))
      throw std::invalid_argument("encoder: downsample_factor must be a power of two");
    if (e.pooling_blocks() > e.block_count() - 1)
      throw std::invalid_argument("encoder: downsample_factor " + std::to_string(e.downsample_factor) + " needs " +
                                  std::to_string(e.pooling_blocks() + 1) + " blocks, have " +
                                  std::to_string(e.block_count()));
    if (e.dropout_rate < 0.0 || e.dropout_rate >= 1.0) throw std::invalid_argument("encoder: dropout_rate must be in [0, 1)");
    nn::parse_norm_kind(e.norm);
    const auto& g = generator;
    if (g.channels.empty()) throw std::invalid_argument("generator: channels must not be empty");
    if (g.block_count() < e.pooling_blocks())
      throw std::invalid_argument("generator: " + std::to_string(g.block_count()) + " blocks cannot upsample by " +
                                  std::to_string(e.downsample_factor));
    if (g.attention_stage >= g.block_count()) throw std::invalid_argument("generator: attention_stage out of range");
    if (g.attention_stage >= 0 && g.channels[g.attention_stage] < 8)
      throw std::invalid_argument("generator: attention needs >= 8 channels");
    if (discriminator.channels.empty()) throw std::invalid_argument("discriminator: channels must not be empty");
    if (extractor.stage_channels.size() != 5) throw std::invalid_argument("extractor: expected 5 VGG stages");
    for (int t : extractor.taps)
      if (t < 1 || t > 13) throw std::invalid_argument("extractor: taps must be conv indices in 1..13");
  }
};

struct TrainConfig {
  double lr_gen = 1e-4;
  double lr_disc = 3e-5;
  double adam_beta1 = 0.0;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double lr_decay_per_epoch = 0.9;
  double ema_beta = 0.999;
  int batch_size = 16;
  int epochs = 12;
  double aug_factor = 1.2;
  bool aug_on_disc_real = true;
  bool aug_on_gen_output = false;
  double lambda_per = 0.2;
  double lambda_adv = 0.03;
  /// Disables the discriminator and the adversarial term.
  bool adversarial = true;
  std::uint64_t seed = 0;
  int image_size = 256;
  bool random_crop = true;
  /// Optional pretrained imports (tensor archive + name mapping).
  std::string pretrained_generator;
  std::string pretrained_discriminator;
  std::string pretrained_embedding;
  std::string pretrained_mapping;

  void validate() const {
    if (!(lr_gen > 0) || !(lr_disc > 0)) throw std::invalid_argument("train: learning rates must be positive");
    if (adam_beta1 < 0 || adam_beta1 >= 1 || adam_beta2 < 0 || adam_beta2 >= 1)
      throw std::invalid_argument("train: Adam betas must be in [0, 1)");
    if (ema_beta < 0 || ema_beta >= 1) throw std::invalid_argument("train: ema_beta must be in [0, 1)");
    if (!(lr_decay_per_epoch > 0)) throw std::invalid_argument("train: lr_decay_per_epoch must be positive");
    if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
    if (!(aug_factor > 0)) throw std::invalid_argument("train: aug_factor must be positive");
    if (lambda_per < 0 || lambda_adv < 0) throw std::invalid_argument("train: loss weights must be non-negative");
  }
};

// JSON mapping. Unknown keys are rejected so typos in config files surface.

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EncoderConfig, channels, dropout_rate, norm, use_residual,
                                                downsample_factor, dropout_in_last_block)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(GeneratorConfig, channels, attention_stage)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DiscriminatorConfig, channels, spectral_norm, zero_init)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ExtractorConfig, stage_channels, taps, weights, seed)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ModelConfig, num_classes, class_dim, z_chunk_dim, embedding_init_std,
                                                encoder, generator, discriminator, extractor)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, lr_gen, lr_disc, adam_beta1, adam_beta2, adam_eps,
                                                lr_decay_per_epoch, ema_beta, batch_size, epochs, aug_factor,
                                                aug_on_disc_real, aug_on_gen_output, lambda_per, lambda_adv,
                                                adversarial, seed, image_size, random_crop, pretrained_generator,
                                                pretrained_discriminator, pretrained_embedding, pretrained_mapping)

namespace detail {
inline void check_keys(const nlohmann::json& j, const nlohmann::json& reference, const std::string& where) {
  if (!j.is_object()) return;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!reference.contains(it.key())) throw std::invalid_argument("unknown config key '" + where + it.key() + "'");
    if (reference[it.key()].is_object()) check_keys(it.value(), reference[it.key()], where + it.key() + ".");
  }
}
}  // namespace detail

/// Top-level run configuration: {"model": {...}, "train": {...}, "data": {...}}.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::string manifest;  // training manifest path
  std::string class_manifest;
  int log_every = 10;
  std::string checkpoint_dir = "checkpoints";
  int checkpoint_every = 0;
  int max_steps = 0;  // 0: run all epochs
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RunConfig, model, train, manifest, class_manifest, log_every,
                                                checkpoint_dir, checkpoint_every, max_steps)

inline RunConfig parse_run_config(const nlohmann::json& j) {
  detail::check_keys(j, nlohmann::json(RunConfig{}), "");
  RunConfig cfg = j.get<RunConfig>();
  cfg.model.validate();
  cfg.train.validate();
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error("config file " + path + ": " + e.what());
  }
  return parse_run_config(j);
}

/// Small configuration for CPU-scale runs: 64x64 images, narrow networks.
inline ModelConfig desk_model_config(int num_classes = 2) {
  ModelConfig m;
  m.num_classes = num_classes;
  m.encoder.channels = {16, 24, 32, 48, 64};
  m.generator.channels = {48, 32, 24, 16};
  m.generator.attention_stage = 1;
  m.discriminator.channels = {16, 32, 48, 64};
  m.extractor.stage_channels = {8, 16, 24, 32, 32};
  return m;
}

inline TrainConfig desk_train_config() {
  TrainConfig t;
  t.image_size = 64;
  t.batch_size = 16;
  return t;
}

}  // namespace bigcolor
