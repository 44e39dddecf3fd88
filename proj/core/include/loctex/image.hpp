#pragma once

#include <array>
#include <filesystem>

#include <opencv2/core.hpp>
#include <torch/torch.h>

namespace loctex {

inline constexpr std::array<float, 3> kImageMean{0.485f, 0.456f, 0.406f};
inline constexpr std::array<float, 3> kImageStd{0.229f, 0.224f, 0.225f};

/// Decodes an image file to RGB float32 in [0, 1]. Throws std::runtime_error
/// when the file cannot be read or decoded.
cv::Mat load_image_rgb(const std::filesystem::path& path);

/// Converts 8-bit BGR (OpenCV's decode order) to RGB float32 in [0, 1].
cv::Mat bgr8_to_rgb_float(const cv::Mat& bgr);

/// RGB float32 in [0, 1] to 8-bit BGR for writing.
cv::Mat rgb_float_to_bgr8(const cv::Mat& rgb);

/// Bilinear resize to size x size.
cv::Mat resize_square(const cv::Mat& image, int size);

/// HxWx3 RGB float32 -> (3, H, W) tensor, channel-normalized.
torch::Tensor image_to_tensor(const cv::Mat& rgb);

}  // namespace loctex
