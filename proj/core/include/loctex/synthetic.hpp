#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "loctex/dataset.hpp"

namespace loctex {

/// Quadrant index: 0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right.
/// The 1x attention map of a 64-pixel input is 2x2, one cell per quadrant,
/// and cell (row, col) = (q / 2, q % 2).
struct SyntheticSample {
  TrainingSample sample;
  std::string color;
  std::string shape;
  int quadrant = 0;
  std::size_t shape_word = 0;  // index into the narrative's timed words
};

struct SyntheticOptions {
  std::size_t count = 32;
  int image_size = 64;
  std::uint64_t seed = 0;
  double seconds_per_word = 0.5;
};

/// Colored shapes (circle, square, triangle in red, green, blue) centered in
/// one quadrant of a dark noisy background. Captions read "a {color} {shape}
/// in the {top|bottom} {left|right} corner"; the trace circles the shape
/// widely while the color, shape and position words are spoken and drifts
/// close to it otherwise. Captions are unique while count <= 36.
std::vector<SyntheticSample> make_quadrant_shapes(const SyntheticOptions& opts);

/// The captions of `samples`, for vocabulary training.
std::vector<std::string> captions_of(const std::vector<SyntheticSample>& samples);

InMemoryData as_training_data(const std::vector<SyntheticSample>& samples);

/// Writes `images/<id>.png` and `annotations.jsonl` (image paths relative to
/// `dir`) so the set can go through prepare-data.
void write_synthetic(const std::filesystem::path& dir, const std::vector<SyntheticSample>& samples);

}  // namespace loctex
