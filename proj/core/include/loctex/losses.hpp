#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "loctex/backbones.hpp"

namespace loctex {

/// Which pairs enter the InfoNCE denominator for anchor i.
enum class DenominatorMode {
  kAsWritten,  // negatives only (j != i)
  kStandard,   // all j, positive included
};

const char* to_string(DenominatorMode mode);
DenominatorMode denominator_mode_from_string(const std::string& name);

struct LossConfig {
  double tau = 0.1;
  DenominatorMode denominator = DenominatorMode::kAsWritten;
  /// Adds the text-anchored direction to the image-anchored one.
  bool symmetric = false;
  /// Supervised scales (1 = final map, 2 = second-to-last, 4).
  std::vector<int> scales{1, 2};
  double weight_contrastive = 1.0;
  double weight_localization = 1.0;
  /// Samples whose target norm is at most this contribute nothing.
  double epsilon_norm = 1e-12;

  void validate() const;
};

/// u.v / (|u| |v|). Throws std::invalid_argument on zero-norm or size mismatch.
double cosine_sim(std::span<const double> u, std::span<const double> v);

/// InfoNCE over a batch of (N, E) embeddings, summed over anchors. Gradients
/// are analytic.
torch::Tensor contrastive_loss(const torch::Tensor& visual, const torch::Tensor& textual, const LossConfig& cfg);

/// Spatial softmax of token/location affinities: z_textual (N, C, L) and
/// z_visual (N, C, H, W) give (N, L, H, W), each token slice summing to 1.
torch::Tensor attention_map(const torch::Tensor& z_textual, const torch::Tensor& z_visual);

/// Normalized L2 distance between predicted and rendered attention, per
/// sample over the flattened (L, H, W) tensor with masked-out tokens zeroed
/// in both, averaged over the batch. `token_mask` is (N, L); samples with an
/// empty target contribute 0. Gradients are analytic.
torch::Tensor localization_loss(const torch::Tensor& attention, const torch::Tensor& target,
                                const torch::Tensor& token_mask, const LossConfig& cfg);

/// Rendered targets at one scale: target (N, L, H, W) in {0, 1}, token_mask (N, L).
struct LocalizationTarget {
  torch::Tensor target;
  torch::Tensor token_mask;
};

struct LossBreakdown {
  torch::Tensor total;
  double contrastive = 0.0;
  std::map<int, double> localization;  // by scale

  double total_value() const { return total.item<double>(); }
};

/// weight_contrastive * L_C + weight_localization * sum over scales of L_L.
/// `attention` maps scale -> (N, L, H, W). A zero weight drops the term from
/// the graph. Throws std::invalid_argument when a configured scale has no
/// attention map or target.
LossBreakdown total_loss(const ContrastiveEmbeddings& embeddings, const std::map<int, torch::Tensor>& attention,
                         const std::map<int, LocalizationTarget>& targets, const LossConfig& cfg);

/// Computes attention maps from the model outputs and combines the losses.
LossBreakdown total_loss(const ModelOutputs& outputs, const std::map<int, LocalizationTarget>& targets,
                         const LossConfig& cfg);

}  // namespace loctex
