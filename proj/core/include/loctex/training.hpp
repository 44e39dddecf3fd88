#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <initializer_list>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "loctex/augment.hpp"
#include "loctex/backbones.hpp"
#include "loctex/config.hpp"
#include "loctex/dataset.hpp"
#include "loctex/losses.hpp"
#include "loctex/tokenizer.hpp"

namespace loctex {

/// SHA-256 of the config with output_dir and dataset blanked; a run
/// manifest's config_hash.
std::string config_fingerprint(const TrainConfig& cfg);

/// Mixes several integers into one 64-bit seed through std::seed_seq.
std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts);

/// The model config of a run with the text vocabulary filled in.
ModelConfig resolved_model_config(const TrainConfig& cfg, std::int64_t vocab_size);

/// Seeds torch's generator, then builds the model.
LocTexModel make_model(const ModelConfig& cfg, std::uint64_t seed);

/// Input size, caption length and the target resolutions (final resolution
/// times each supervised scale).
SampleGeometry geometry_for(const TrainConfig& cfg);

/// A trailing batch of one sample is dropped: the contrastive loss needs
/// at least two.
std::int64_t steps_per_epoch(std::size_t dataset_size, int batch_size);

/// Seeded permutation of [0, n) for one epoch.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::int64_t epoch);

struct Batch {
  std::vector<std::string> sample_ids;
  torch::Tensor images;  // (N, 3, S, S) float
  torch::Tensor ids;     // (N, L) int64
  std::map<int, LocalizationTarget> targets;  // by scale
};

/// Stacks augmented samples; `scales` are the supervised scales and
/// `final_resolution` maps scale s to resolution s * final_resolution.
Batch collate(const std::vector<AugmentedSample>& samples, const std::vector<std::string>& sample_ids,
              const std::vector<int>& scales, int final_resolution);

/// SGD with three parameter groups in this order: visual backbone, textual
/// backbone, projection heads.
std::unique_ptr<torch::optim::SGD> make_optimizer(LocTexModel& model, const TrainConfig& cfg);

struct StepRecord {
  std::int64_t step = 0;
  std::int64_t epoch = 0;
  double total = 0.0;
  double contrastive = 0.0;
  std::map<int, double> localization;  // by scale
  double lr_visual = 0.0;
  double lr_textual = 0.0;
  double lr_heads = 0.0;

  std::string to_json() const;
};

class NonFiniteLossError : public std::runtime_error {
 public:
  NonFiniteLossError(const std::string& what, std::vector<std::string> batch_ids)
      : std::runtime_error(what), batch_ids(std::move(batch_ids)) {}
  std::vector<std::string> batch_ids;
};

struct FitOptions {
  /// Run directory for config.ini, metrics.jsonl, checkpoints/ and
  /// manifest.json. Empty: nothing is written.
  std::filesystem::path output_dir;
  /// Checkpoint to continue from; it must come from the same config and vocabulary.
  std::filesystem::path resume;
  /// Stop once this many optimizer steps have completed in total (< 0: no limit).
  std::int64_t max_steps = -1;
  /// Recorded in the run manifest.
  std::string dataset_fingerprint;
  std::function<void(const StepRecord&)> on_step;
};

struct FitResult {
  std::vector<StepRecord> log;
  std::vector<double> epoch_mean_total;  // epochs completed by this call
  std::filesystem::path last_checkpoint;
  std::int64_t steps = 0;  // total completed, including resumed ones
};

/// Trains `model` (built from resolved_model_config) on `data`. Learning
/// rates follow the warmup + cosine schedule per step and per group. Data
/// order, augmentation and dropout are functions of (seed, epoch, step), so a
/// run resumed from an epoch-boundary checkpoint continues the uninterrupted
/// trajectory. Throws NonFiniteLossError (after writing nonfinite.json) when
/// the loss stops being finite.
FitResult fit(const TrainConfig& cfg, const TrainingData& data, const Vocabulary& vocab, LocTexModel& model,
              const FitOptions& opts = {});

/// File name of the checkpoint written after `epoch` completed epochs.
std::string checkpoint_name(std::int64_t epoch);

}  // namespace loctex
