#include "loctex/image.hpp"

#include <stdexcept>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace loctex {

cv::Mat load_image_rgb(const std::filesystem::path& path) {
  const cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw std::runtime_error("cannot decode image " + path.string());
  return bgr8_to_rgb_float(bgr);
}

cv::Mat bgr8_to_rgb_float(const cv::Mat& bgr) {
  if (bgr.type() != CV_8UC3) throw std::invalid_argument("expected an 8-bit 3-channel image");
  cv::Mat rgb, out;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  rgb.convertTo(out, CV_32FC3, 1.0 / 255.0);
  return out;
}

cv::Mat rgb_float_to_bgr8(const cv::Mat& rgb) {
  if (rgb.type() != CV_32FC3) throw std::invalid_argument("expected a float 3-channel image");
  cv::Mat u8, bgr;
  rgb.convertTo(u8, CV_8UC3, 255.0);
  cv::cvtColor(u8, bgr, cv::COLOR_RGB2BGR);
  return bgr;
}

cv::Mat resize_square(const cv::Mat& image, int size) {
  if (size < 1) throw std::invalid_argument("resize_square: size must be positive");
  if (image.rows == size && image.cols == size) return image.clone();
  cv::Mat out;
  cv::resize(image, out, cv::Size(size, size), 0, 0, cv::INTER_LINEAR);
  return out;
}

torch::Tensor image_to_tensor(const cv::Mat& rgb) {
  if (rgb.type() != CV_32FC3) throw std::invalid_argument("image_to_tensor: expected RGB float32");
  const cv::Mat contiguous = rgb.isContinuous() ? rgb : rgb.clone();
  auto t = torch::from_blob(contiguous.data, {contiguous.rows, contiguous.cols, 3}, torch::kFloat32)
               .permute({2, 0, 1})
               .clone();
  const auto mean = torch::tensor({kImageMean[0], kImageMean[1], kImageMean[2]}).view({3, 1, 1});
  const auto std = torch::tensor({kImageStd[0], kImageStd[1], kImageStd[2]}).view({3, 1, 1});
  return (t - mean) / std;
}

}  // namespace loctex
