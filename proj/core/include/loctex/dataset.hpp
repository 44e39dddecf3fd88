#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "loctex/annotations.hpp"
#include "loctex/tokenizer.hpp"

namespace loctex {

/// One training example: an RGB float32 image of any size and its narrative.
struct TrainingSample {
  std::string id;
  cv::Mat image;
  LocalizedNarrative narrative;
};

/// Random-access sample source.
class TrainingData {
 public:
  virtual ~TrainingData() = default;
  virtual std::size_t size() const = 0;
  virtual TrainingSample get(std::size_t index) const = 0;
};

class InMemoryData : public TrainingData {
 public:
  explicit InMemoryData(std::vector<TrainingSample> samples) : samples_(std::move(samples)) {}
  std::size_t size() const override { return samples_.size(); }
  TrainingSample get(std::size_t index) const override { return samples_.at(index); }

 private:
  std::vector<TrainingSample> samples_;
};

/// File names inside a prepared dataset directory.
namespace layout {
inline constexpr const char* kIndex = "index.tsv";
inline constexpr const char* kVocab = "vocab.txt";
inline constexpr const char* kManifest = "manifest.json";
inline constexpr const char* kTargets = "targets.bin";
}  // namespace layout

/// Dataset directory written by prepare-data: the index points at the
/// annotation file and images, which are read lazily. Relative paths in the
/// index resolve against the directory.
class PreparedDataset : public TrainingData {
 public:
  explicit PreparedDataset(const std::filesystem::path& dir);

  std::size_t size() const override { return index_.entries.size(); }
  TrainingSample get(std::size_t index) const override;

  const DatasetIndex& index() const { return index_; }
  const Vocabulary& vocab() const { return vocab_; }
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path resolve(const std::string& p) const;

  std::filesystem::path dir_;
  DatasetIndex index_;
  Vocabulary vocab_;
};

}  // namespace loctex
