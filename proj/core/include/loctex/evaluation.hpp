#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>
#include <torch/torch.h>

#include "loctex/backbones.hpp"
#include "loctex/checkpoint.hpp"
#include "loctex/config.hpp"
#include "loctex/probe.hpp"
#include "loctex/tokenizer.hpp"

namespace loctex {

struct LoadedModel {
  LocTexModel model{nullptr};
  TrainConfig config;
  CheckpointMeta meta;
  Vocabulary vocab;  // the tokenizer the model was trained with
};

/// Rebuilds the model from the config stored in the checkpoint and loads
/// its weights, in eval mode. With `expected`, a checkpoint whose model
/// config differs raises CheckpointError.
LoadedModel load_model(const std::filesystem::path& checkpoint, const ModelConfig* expected = nullptr);

/// Frozen, eval-mode global features: each RGB float image is resized to the
/// model input size and its final feature map averaged over space. Returns
/// (n, C) with C the final visual width. Rows do not depend on batch_size.
torch::Tensor extract_features(LocTexModel& model, const std::vector<cv::Mat>& images, int batch_size = 32);

FeatureMatrix to_feature_matrix(const torch::Tensor& features);

/// Predicted attention (L, H, W) of one image and caption at `scale` x the
/// final resolution, in eval mode.
torch::Tensor predict_attention(LocTexModel& model, const cv::Mat& rgb, const TokenizedCaption& tokens, int scale);

struct OverlayOptions {
  double alpha = 0.5;
  int colormap = cv::COLORMAP_JET;
};

/// Bilinearly resizes a (H, W) attention slice to the image size, divides by
/// its maximum, colors it and alpha-blends it over the RGB float image.
cv::Mat overlay_attention(const cv::Mat& rgb, const torch::Tensor& slice, const OverlayOptions& opts = {});

/// (H, W) float tensor -> (size, size) CV_32F map with half-pixel-center bilinear resampling.
cv::Mat resize_attention(const torch::Tensor& slice, int size);

struct VisualizeOptions {
  int scale = 2;  // second-to-last feature map
  OverlayOptions overlay;
  /// Words whose tokens are drawn; empty selects every word.
  std::vector<std::string> words;
};

struct VisualizeResult {
  std::vector<std::filesystem::path> token_files;
  std::filesystem::path contact_sheet;
};

/// Writes token_<pos>_<token>.png for every token of the selected words plus
/// contact_sheet.png into out_dir. A selected word absent from the caption
/// raises std::invalid_argument.
VisualizeResult visualize_attention(LocTexModel& model, const Vocabulary& vocab, const cv::Mat& rgb,
                                    const std::string& caption, const std::filesystem::path& out_dir,
                                    const VisualizeOptions& opts = {});

}  // namespace loctex
