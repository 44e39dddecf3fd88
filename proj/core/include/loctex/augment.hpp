#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <torch/torch.h>

#include "loctex/annotations.hpp"
#include "loctex/tokenizer.hpp"
#include "loctex/trace_render.hpp"

namespace loctex {

struct AugmentConfig {
  bool random_crop = true;
  double crop_min_scale = 0.5;  // smallest kept area fraction
  bool flip = true;
  double flip_probability = 0.5;
  bool color_jitter = true;
  double brightness = 0.4;
  double contrast = 0.4;
  double saturation = 0.4;
  /// Random token window for captions longer than max_length.
  bool caption_crop = true;

  /// All geometric, photometric and caption randomness off.
  static AugmentConfig none();
  void validate() const;
};

/// Crop rectangle in normalized image coordinates.
struct CropWindow {
  double x0 = 0.0;
  double y0 = 0.0;
  double width = 1.0;
  double height = 1.0;
};

/// One sampled set of augmentation parameters.
struct AugmentDecision {
  CropWindow crop;
  bool flip = false;
  double brightness = 1.0;
  double contrast = 1.0;
  double saturation = 1.0;
  std::optional<std::uint64_t> caption_seed;
};

/// Draws crop (area fraction and 3/4-4/3 aspect, falling back to the full
/// image), flip, jitter factors and the caption window seed.
AugmentDecision sample_augmentation(const AugmentConfig& cfg, int image_width, int image_height, std::mt19937_64& rng);

/// Maps trace points into the crop window (points outside are dropped) and
/// mirrors x when flipping.
std::vector<TracePoint> transform_trace(std::span<const TracePoint> points, const CropWindow& crop, bool flip);

/// "left" <-> "right", keeping surrounding punctuation ("left," -> "right,").
std::string swap_left_right(const std::string& word);

/// Applies the trace transform and, on flip, the left/right word swap.
LocalizedNarrative transform_narrative(const LocalizedNarrative& narrative, const AugmentDecision& decision);

/// Crops, resizes to output_size, flips and jitters an RGB float image.
cv::Mat transform_image(const cv::Mat& rgb, const AugmentDecision& decision, int output_size);

struct SampleGeometry {
  int input_size = 64;
  std::size_t max_length = 16;
  /// Target resolutions to render (final resolution times each scale).
  std::vector<int> resolutions{2, 4};
  int dilation = 0;
};

struct AugmentedSample {
  torch::Tensor image;  // (3, S, S), normalized
  TokenizedCaption tokens;
  std::map<int, RenderedAttention> targets;  // by resolution
  LocalizedNarrative narrative;              // after the geometric transform
};

/// Full per-sample pipeline with a given decision.
AugmentedSample apply_augmentation(const cv::Mat& rgb, const LocalizedNarrative& narrative, const Vocabulary& vocab,
                                   const AugmentDecision& decision, const SampleGeometry& geometry);

/// Samples a decision from `rng` and applies it.
AugmentedSample augment(const cv::Mat& rgb, const LocalizedNarrative& narrative, const Vocabulary& vocab,
                        const AugmentConfig& cfg, const SampleGeometry& geometry, std::mt19937_64& rng);

}  // namespace loctex
