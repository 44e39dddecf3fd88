#include "loctex/augment.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <stdexcept>

#include <opencv2/imgproc.hpp>

#include "loctex/image.hpp"

namespace loctex {

AugmentConfig AugmentConfig::none() {
  AugmentConfig cfg;
  cfg.random_crop = false;
  cfg.flip = false;
  cfg.color_jitter = false;
  cfg.caption_crop = false;
  return cfg;
}

void AugmentConfig::validate() const {
  if (!(crop_min_scale > 0.0 && crop_min_scale <= 1.0)) {
    throw std::invalid_argument("augment: crop_min_scale must lie in (0, 1]");
  }
  if (!(flip_probability >= 0.0 && flip_probability <= 1.0)) {
    throw std::invalid_argument("augment: flip_probability must lie in [0, 1]");
  }
  for (double j : {brightness, contrast, saturation}) {
    if (!(j >= 0.0 && j < 1.0)) throw std::invalid_argument("augment: jitter magnitudes must lie in [0, 1)");
  }
}

AugmentDecision sample_augmentation(const AugmentConfig& cfg, int image_width, int image_height,
                                    std::mt19937_64& rng) {
  cfg.validate();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  AugmentDecision d;
  if (cfg.random_crop) {
    const double aspect_lo = std::log(3.0 / 4.0), aspect_hi = std::log(4.0 / 3.0);
    for (int attempt = 0; attempt < 10; ++attempt) {
      const double area = cfg.crop_min_scale + (1.0 - cfg.crop_min_scale) * unit(rng);
      const double aspect = std::exp(aspect_lo + (aspect_hi - aspect_lo) * unit(rng));
      // Aspect is in pixels; convert to normalized extents.
      const double w = std::sqrt(area * aspect * image_height / image_width);
      const double h = area / w;
      if (w <= 1.0 && h <= 1.0) {
        d.crop = {unit(rng) * (1.0 - w), unit(rng) * (1.0 - h), w, h};
        break;
      }
    }
  }
  if (cfg.flip) d.flip = unit(rng) < cfg.flip_probability;
  if (cfg.color_jitter) {
    auto factor = [&](double m) { return 1.0 - m + 2.0 * m * unit(rng); };
    d.brightness = factor(cfg.brightness);
    d.contrast = factor(cfg.contrast);
    d.saturation = factor(cfg.saturation);
  }
  if (cfg.caption_crop) d.caption_seed = rng();
  return d;
}

std::vector<TracePoint> transform_trace(std::span<const TracePoint> points, const CropWindow& crop, bool flip) {
  std::vector<TracePoint> out;
  out.reserve(points.size());
  const double x1 = crop.x0 + crop.width, y1 = crop.y0 + crop.height;
  for (const auto& p : points) {
    if (p.x < crop.x0 || p.x > x1 || p.y < crop.y0 || p.y > y1) continue;
    double x = (p.x - crop.x0) / crop.width;
    const double y = (p.y - crop.y0) / crop.height;
    if (flip) x = 1.0 - x;
    out.push_back({std::clamp(x, 0.0, 1.0), std::clamp(y, 0.0, 1.0), p.t});
  }
  return out;
}

std::string swap_left_right(const std::string& word) {
  const std::string core = strip_punctuation(word);
  const std::string lowered = ascii_lower(core);
  const char* replacement = lowered == "left" ? "right" : lowered == "right" ? "left" : nullptr;
  if (!replacement) return word;
  const auto pos = word.find(core);
  return word.substr(0, pos) + replacement + word.substr(pos + core.size());
}

LocalizedNarrative transform_narrative(const LocalizedNarrative& narrative, const AugmentDecision& decision) {
  LocalizedNarrative out = narrative;
  out.trace = transform_trace(narrative.trace, decision.crop, decision.flip);
  if (decision.flip) {
    std::string caption;
    for (auto& w : out.timed_words) w.text = swap_left_right(w.text);
    for (const auto& w : split_whitespace(narrative.caption)) {
      if (!caption.empty()) caption += ' ';
      caption += swap_left_right(w);
    }
    out.caption = caption;
  }
  return out;
}

cv::Mat transform_image(const cv::Mat& rgb, const AugmentDecision& decision, int output_size) {
  if (rgb.type() != CV_32FC3) throw std::invalid_argument("transform_image: expected RGB float32");
  // Destination pixel u samples source x = (x0 + (u + 0.5) / S * w) * W - 0.5, so
  // image and trace share one normalized affine map.
  const double sx = decision.crop.width * rgb.cols / output_size;
  const double sy = decision.crop.height * rgb.rows / output_size;
  double ax = sx, bx = decision.crop.x0 * rgb.cols + 0.5 * sx - 0.5;
  if (decision.flip) {
    bx += ax * (output_size - 1);
    ax = -ax;
  }
  const double by = decision.crop.y0 * rgb.rows + 0.5 * sy - 0.5;
  const cv::Mat m = (cv::Mat_<double>(2, 3) << ax, 0.0, bx, 0.0, sy, by);
  cv::Mat out;
  cv::warpAffine(rgb, out, m, cv::Size(output_size, output_size), cv::INTER_LINEAR | cv::WARP_INVERSE_MAP,
                 cv::BORDER_REFLECT_101);

  if (decision.brightness != 1.0) out *= decision.brightness;
  if (decision.contrast != 1.0) {
    cv::Mat gray;
    cv::cvtColor(out, gray, cv::COLOR_RGB2GRAY);
    const double mean = cv::mean(gray)[0];
    out = (out - cv::Scalar::all(mean)) * decision.contrast + cv::Scalar::all(mean);
  }
  if (decision.saturation != 1.0) {
    cv::Mat gray, gray3;
    cv::cvtColor(out, gray, cv::COLOR_RGB2GRAY);
    cv::cvtColor(gray, gray3, cv::COLOR_GRAY2RGB);
    cv::addWeighted(out, decision.saturation, gray3, 1.0 - decision.saturation, 0.0, out);
  }
  cv::min(cv::max(out, 0.0), 1.0, out);
  return out;
}

AugmentedSample apply_augmentation(const cv::Mat& rgb, const LocalizedNarrative& narrative, const Vocabulary& vocab,
                                   const AugmentDecision& decision, const SampleGeometry& geometry) {
  AugmentedSample s;
  s.narrative = transform_narrative(narrative, decision);
  EncodeOptions opts;
  opts.max_length = geometry.max_length;
  opts.crop_seed = decision.caption_seed;
  s.tokens = encode(s.narrative.caption, vocab, s.narrative.timed_words, opts);
  for (int r : geometry.resolutions) s.targets.emplace(r, render_attention(s.narrative, s.tokens, r, geometry.dilation));
  s.image = image_to_tensor(transform_image(rgb, decision, geometry.input_size));
  return s;
}

AugmentedSample augment(const cv::Mat& rgb, const LocalizedNarrative& narrative, const Vocabulary& vocab,
                        const AugmentConfig& cfg, const SampleGeometry& geometry, std::mt19937_64& rng) {
  return apply_augmentation(rgb, narrative, vocab, sample_augmentation(cfg, rgb.cols, rgb.rows, rng), geometry);
}

}  // namespace loctex
