#include "loctex/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <stdexcept>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "loctex/image.hpp"

namespace loctex {

namespace {

struct Color {
  const char* name;
  cv::Scalar rgb;
};

const std::array<Color, 3> kColors{{{"red", {0.9, 0.1, 0.1}}, {"green", {0.1, 0.8, 0.2}}, {"blue", {0.15, 0.3, 0.95}}}};
const std::array<const char*, 3> kShapes{"circle", "square", "triangle"};

constexpr int kPointsPerWord = 10;

void draw_shape(cv::Mat& img, const std::string& shape, cv::Point2d center, double radius, const cv::Scalar& color) {
  const int shift = 4;  // sub-pixel vertices
  const double scale = 1 << shift;
  auto fixed = [&](double x, double y) { return cv::Point(cvRound(x * scale), cvRound(y * scale)); };
  if (shape == "circle") {
    cv::circle(img, fixed(center.x, center.y), cvRound(radius * scale), color, cv::FILLED, cv::LINE_AA, shift);
  } else if (shape == "square") {
    const double h = radius * 0.85;
    std::vector<cv::Point> pts{fixed(center.x - h, center.y - h), fixed(center.x + h, center.y - h),
                               fixed(center.x + h, center.y + h), fixed(center.x - h, center.y + h)};
    cv::fillConvexPoly(img, pts, color, cv::LINE_AA, shift);
  } else {
    std::vector<cv::Point> pts;
    for (int k = 0; k < 3; ++k) {
      const double a = -std::numbers::pi / 2 + 2 * std::numbers::pi * k / 3;
      pts.push_back(fixed(center.x + radius * std::cos(a), center.y + radius * std::sin(a)));
    }
    cv::fillConvexPoly(img, pts, color, cv::LINE_AA, shift);
  }
}

}  // namespace

std::vector<SyntheticSample> make_quadrant_shapes(const SyntheticOptions& opts) {
  if (opts.image_size < 8) throw std::invalid_argument("synthetic: image_size must be at least 8");
  if (!(opts.seconds_per_word > 0)) throw std::invalid_argument("synthetic: seconds_per_word must be positive");

  struct Combo {
    int color, shape, quadrant;
  };
  std::vector<Combo> combos;
  for (int c = 0; c < 3; ++c)
    for (int s = 0; s < 3; ++s)
      for (int q = 0; q < 4; ++q) combos.push_back({c, s, q});

  std::mt19937_64 rng(opts.seed);
  std::shuffle(combos.begin(), combos.end(), rng);
  std::uniform_real_distribution<double> jitter(-0.05, 0.05);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<SyntheticSample> out;
  out.reserve(opts.count);
  const int size = opts.image_size;
  for (std::size_t i = 0; i < opts.count; ++i) {
    const Combo& combo = combos[i % combos.size()];
    SyntheticSample s;
    s.color = kColors[combo.color].name;
    s.shape = kShapes[combo.shape];
    s.quadrant = combo.quadrant;
    const bool top = combo.quadrant < 2, left = combo.quadrant % 2 == 0;

    // Normalized shape center, kept so a 0.15 trace circle stays in the quadrant.
    const double cx = (left ? 0.25 : 0.75) + jitter(rng);
    const double cy = (top ? 0.25 : 0.75) + jitter(rng);

    cv::Mat img(size, size, CV_32FC3);
    cv::RNG noise(rng());
    noise.fill(img, cv::RNG::NORMAL, cv::Scalar::all(0.12), cv::Scalar::all(0.03));
    draw_shape(img, s.shape, {cx * size - 0.5, cy * size - 0.5}, 0.11 * size, kColors[combo.color].rgb);
    cv::min(cv::max(img, 0.0), 1.0, img);

    const std::vector<std::string> words{"a", s.color, s.shape, "in", "the",
                                         top ? "top" : "bottom", left ? "left" : "right", "corner"};
    s.shape_word = 2;
    LocalizedNarrative& n = s.sample.narrative;
    s.sample.id = "synth_" + std::to_string(i);
    n.image_id = s.sample.id;
    n.image_path = "images/" + s.sample.id + ".png";
    double phase = 2 * std::numbers::pi * unit(rng);
    for (std::size_t w = 0; w < words.size(); ++w) {
      const double start = w * opts.seconds_per_word, end = (w + 1) * opts.seconds_per_word;
      n.timed_words.push_back({words[w], start, end});
      if (!n.caption.empty()) n.caption += ' ';
      n.caption += words[w];
      const bool grounded = w == 1 || w == 2 || w == 5 || w == 6;
      const double r = grounded ? 0.15 : 0.06;
      for (int k = 0; k < kPointsPerWord; ++k) {
        // Strictly inside the word window so each word sees only its own points.
        const double t = start + (k + 0.5) * opts.seconds_per_word / kPointsPerWord;
        phase += 2 * std::numbers::pi / kPointsPerWord;
        n.trace.push_back({cx + r * std::cos(phase), cy + r * std::sin(phase), t});
      }
    }
    s.sample.image = img;
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<std::string> captions_of(const std::vector<SyntheticSample>& samples) {
  std::vector<std::string> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.sample.narrative.caption);
  return out;
}

InMemoryData as_training_data(const std::vector<SyntheticSample>& samples) {
  std::vector<TrainingSample> v;
  v.reserve(samples.size());
  for (const auto& s : samples) v.push_back(s.sample);
  return InMemoryData(std::move(v));
}

void write_synthetic(const std::filesystem::path& dir, const std::vector<SyntheticSample>& samples) {
  std::filesystem::create_directories(dir / "images");
  std::ofstream ann(dir / "annotations.jsonl");
  if (!ann) throw std::runtime_error("cannot write " + (dir / "annotations.jsonl").string());
  for (const auto& s : samples) {
    const auto path = dir / s.sample.narrative.image_path;
    if (!cv::imwrite(path.string(), rgb_float_to_bgr8(s.sample.image))) {
      throw std::runtime_error("cannot write " + path.string());
    }
    ann << serialize_narrative(s.sample.narrative) << '\n';
  }
}

}  // namespace loctex
