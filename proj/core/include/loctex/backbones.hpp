#pragma once

#include <map>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace loctex {

enum class BlockKind { kBasic, kBottleneck };

struct VisualConfig {
  BlockKind block = BlockKind::kBasic;
  std::vector<int> layers{1, 1, 1, 1};  // residual blocks per stage
  int base_width = 8;                    // channels of the first stage (before expansion)

  /// Channels of the stage `stage` output (0-based), expansion included.
  int stage_channels(int stage) const;
  int out_channels() const { return stage_channels(3); }
  int stride_of_stage(int stage) const { return 4 << stage; }  // 4, 8, 16, 32
};

struct TextualConfig {
  int vocab_size = 10000;
  int max_length = 60;
  int width = 1024;
  int layers = 4;
  int heads = 16;
  int ffn_multiplier = 4;
  double dropout = 0.1;
};

struct HeadConfig {
  int embed_dim = 1024;
  /// Visual feature-map scales supervised by the localization loss, as
  /// multiples of the final resolution (1 = final map, 2 = second-to-last, 4).
  std::vector<int> scales{1, 2};
};

struct ModelConfig {
  VisualConfig visual;
  TextualConfig textual;
  HeadConfig heads;
  int input_size = 224;

  /// Final feature-map resolution (input / 32).
  int final_resolution() const { return input_size / 32; }

  /// ResNet-50 visual backbone, 4-layer 1024-wide 16-head text encoder,
  /// 1024-d projections, scales {1, 2}, 224 input.
  static ModelConfig full();
  /// Desk-scale preset: 4-stage basic-block ResNet ending at 64 channels,
  /// 1-layer 32-wide text encoder, 32-d projections, 64 input.
  static ModelConfig toy(int vocab_size, int max_length = 16);
};

/// Backbone outputs; maps are (N, C, H, W), `stage_maps[s]` is the output of stage s.
struct VisualFeatures {
  torch::Tensor final_map;
  torch::Tensor penult_map;
  std::vector<torch::Tensor> stage_maps;

  /// Feature map at `scale` x the final resolution (1, 2 or 4).
  const torch::Tensor& at_scale(int scale) const;
};

/// (N, D, L) token features and the (N, L) pad mask (true = pad).
struct TextualFeatures {
  torch::Tensor seq;
  torch::Tensor pad_mask;
};

/// (N, E) projected global embeddings.
struct ContrastiveEmbeddings {
  torch::Tensor visual;
  torch::Tensor textual;
};

/// Position-wise projections: z_visual[scale] is (N, E, sR, sR), z_textual is (N, E, L).
struct LocalizationFeatures {
  std::map<int, torch::Tensor> visual;
  torch::Tensor textual;
};

class BasicBlockImpl : public torch::nn::Module {
 public:
  BasicBlockImpl(int in_channels, int width, int stride);
  torch::Tensor forward(const torch::Tensor& x);
  static constexpr int kExpansion = 1;

 private:
  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
  torch::nn::BatchNorm2d bn1{nullptr}, bn2{nullptr};
  torch::nn::Sequential downsample{nullptr};
};
TORCH_MODULE(BasicBlock);

class BottleneckImpl : public torch::nn::Module {
 public:
  BottleneckImpl(int in_channels, int width, int stride);
  torch::Tensor forward(const torch::Tensor& x);
  static constexpr int kExpansion = 4;

 private:
  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, conv3{nullptr};
  torch::nn::BatchNorm2d bn1{nullptr}, bn2{nullptr}, bn3{nullptr};
  torch::nn::Sequential downsample{nullptr};
};
TORCH_MODULE(Bottleneck);

/// Residual network without the global pool and classifier.
class VisualBackboneImpl : public torch::nn::Module {
 public:
  explicit VisualBackboneImpl(const VisualConfig& cfg);
  /// `images` is (N, 3, S, S) with S divisible by 32.
  VisualFeatures forward(const torch::Tensor& images);
  const VisualConfig& config() const { return cfg_; }

 private:
  VisualConfig cfg_;
  torch::nn::Conv2d stem_conv{nullptr};
  torch::nn::BatchNorm2d stem_bn{nullptr};
  torch::nn::MaxPool2d stem_pool{nullptr};
  std::vector<torch::nn::Sequential> stages_;
};
TORCH_MODULE(VisualBackbone);

/// Transformer encoder over BPE ids with learned positions and GELU feed-forward.
class TextualBackboneImpl : public torch::nn::Module {
 public:
  explicit TextualBackboneImpl(const TextualConfig& cfg);
  /// `ids` is (N, L) int64 with L == max_length; pad id 0.
  TextualFeatures forward(const torch::Tensor& ids);
  const TextualConfig& config() const { return cfg_; }

 private:
  TextualConfig cfg_;
  torch::nn::Embedding token_embedding{nullptr};
  torch::nn::Embedding position_embedding{nullptr};
  torch::nn::LayerNorm embedding_norm{nullptr};
  torch::nn::TransformerEncoder encoder{nullptr};
};
TORCH_MODULE(TextualBackbone);

/// The contrastive (global) and localization (position-wise) projections.
class ProjectionHeadsImpl : public torch::nn::Module {
 public:
  ProjectionHeadsImpl(const ModelConfig& cfg);

  ContrastiveEmbeddings project_contrastive(const VisualFeatures& v, const TextualFeatures& t);
  LocalizationFeatures project_localization(const VisualFeatures& v, const TextualFeatures& t);
  /// Localization features at the listed scales only.
  LocalizationFeatures project_localization(const VisualFeatures& v, const TextualFeatures& t,
                                            const std::vector<int>& scales);

  torch::nn::Linear contrastive_visual{nullptr}, contrastive_textual{nullptr};
  torch::nn::Linear localization_textual{nullptr};
  std::map<int, torch::nn::Linear> localization_visual;
};
TORCH_MODULE(ProjectionHeads);

/// Mean over spatial cells: (N, C, H, W) -> (N, C).
torch::Tensor spatial_mean(const torch::Tensor& map);
/// Mean over non-pad positions: (N, D, L), (N, L) -> (N, D).
torch::Tensor masked_sequence_mean(const torch::Tensor& seq, const torch::Tensor& pad_mask);
/// Applies `linear` to the channel axis of a channels-first tensor (N, C, ...).
torch::Tensor apply_channelwise(torch::nn::Linear& linear, const torch::Tensor& x);

struct ModelOutputs {
  ContrastiveEmbeddings embeddings;
  LocalizationFeatures localization;
  TextualFeatures textual;
};

class LocTexModelImpl : public torch::nn::Module {
 public:
  explicit LocTexModelImpl(const ModelConfig& cfg);

  /// Runs both backbones and heads; localization features are computed only
  /// when `with_localization` is set.
  ModelOutputs forward(const torch::Tensor& images, const torch::Tensor& ids, bool with_localization = true);

  const ModelConfig& config() const { return cfg_; }

  VisualBackbone visual{nullptr};
  TextualBackbone textual{nullptr};
  ProjectionHeads heads{nullptr};

 private:
  ModelConfig cfg_;
};
TORCH_MODULE(LocTexModel);

}  // namespace loctex
