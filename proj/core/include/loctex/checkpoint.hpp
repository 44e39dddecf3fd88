#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include <torch/torch.h>

#include "loctex/backbones.hpp"

namespace loctex {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything stored next to the tensors.
struct CheckpointMeta {
  static constexpr std::int64_t kFormatVersion = 1;

  std::int64_t format_version = kFormatVersion;
  std::string config_ini;  // full TrainConfig
  std::int64_t vocab_size = 0;
  std::string vocab_hash;
  std::string vocab_text;  // Vocabulary::to_string()
  std::int64_t epoch = 0;  // completed epochs
  std::int64_t step = 0;   // completed optimizer steps
  std::string manifest_json;
};

/// Writes model parameters/buffers, optimizer state (when given) and meta.
void save_checkpoint(const std::filesystem::path& path, LocTexModel& model, torch::optim::Optimizer* optimizer,
                     const CheckpointMeta& meta);

/// Reads only the meta block.
CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path);

/// Restores into an already constructed model (and optimizer). Throws
/// CheckpointError when the file is missing, has another format version or
/// the tensor shapes disagree with the model.
CheckpointMeta load_checkpoint(const std::filesystem::path& path, LocTexModel& model,
                               torch::optim::Optimizer* optimizer = nullptr);

}  // namespace loctex
