#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "loctex/augment.hpp"
#include "loctex/backbones.hpp"
#include "loctex/losses.hpp"

namespace loctex {

/// Everything a training run needs besides the data. Serialized as INI:
///
///   [model]  preset, input_size, visual_block, visual_layers, visual_width,
///            text_width, text_layers, text_heads, text_ffn_multiplier,
///            text_dropout, max_length, embed_dim, scales
///   [loss]   tau, denominator, symmetric, weight_contrastive,
///            weight_localization, epsilon_norm
///   [optim]  batch_size, epochs, warmup_epochs, lr_visual, lr_textual,
///            lr_heads, momentum, weight_decay
///   [augment] random_crop, crop_min_scale, flip, flip_probability,
///            color_jitter, brightness, contrast, saturation, caption_crop
///   [data]   dataset, dilation
///   [run]    seed, output_dir, checkpoint_every, log_every
///
/// Keys left out keep the preset's value; unknown keys are an error.
struct TrainConfig {
  ModelConfig model = ModelConfig::toy(0);
  LossConfig loss;
  AugmentConfig augment;

  int batch_size = 32;
  int epochs = 200;
  int warmup_epochs = 0;
  double lr_visual = 0.4;
  double lr_textual = 0.002;
  double lr_heads = 0.4;
  double momentum = 0.9;
  double weight_decay = 1e-4;

  std::string dataset;  // directory written by prepare-data
  int dilation = 0;

  std::uint64_t seed = 0;
  std::string output_dir;
  int checkpoint_every = 0;  // epochs; 0 = only at the end
  int log_every = 1;         // steps

  /// 600 epochs, batch 1024, 20 warmup epochs, ResNet-50 and the 4-layer text encoder.
  static TrainConfig full();
  /// Desk-scale defaults on the toy model: 200 epochs of batch 32, 20 warmup
  /// epochs, standard contrastive denominator.
  static TrainConfig toy();

  void validate() const;

  std::string to_ini() const;
  static TrainConfig from_ini(const std::string& text);
  static TrainConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

}  // namespace loctex
