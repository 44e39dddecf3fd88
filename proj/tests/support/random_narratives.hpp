#pragma once

#include <random>
#include <string>
#include <vector>

#include "loctex/annotations.hpp"

namespace loctex::testing {

inline const std::vector<std::string>& word_pool() {
  static const std::vector<std::string> pool{
      "a", "man", "on", "the", "left", "right", "is", "holding", "red", "umbrella", "dog", "sitting",
      "near", "helmets", "goggles", "in", "this", "image", "we", "can", "see", "sky", "and", "trees"};
  return pool;
}

/// Narrative with `words` timed words of 0.4-0.8 s each and a trace sampled
/// every 0.1 s over the whole utterance.
inline LocalizedNarrative random_narrative(std::mt19937_64& rng, int words, const std::string& id = "img") {
  std::uniform_int_distribution<std::size_t> pick(0, word_pool().size() - 1);
  std::uniform_real_distribution<double> dur(0.4, 0.8);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> step(0.0, 0.05);

  LocalizedNarrative n;
  n.image_id = id;
  n.image_path = id + ".jpg";
  double t = 0.0;
  for (int i = 0; i < words; ++i) {
    TimedWord w{word_pool()[pick(rng)], t, t + dur(rng)};
    t = w.end;
    if (!n.caption.empty()) n.caption += ' ';
    n.caption += w.text;
    n.timed_words.push_back(std::move(w));
  }
  double x = unit(rng), y = unit(rng);
  for (double s = 0.0; s <= t; s += 0.1) {
    x = std::clamp(x + step(rng), 0.0, 1.0);
    y = std::clamp(y + step(rng), 0.0, 1.0);
    n.trace.push_back({x, y, s});
  }
  return n;
}

}  // namespace loctex::testing
