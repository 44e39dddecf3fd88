#include "loctex/backbones.hpp"

#include <stdexcept>

namespace loctex {

namespace nn = torch::nn;

int VisualConfig::stage_channels(int stage) const {
  const int expansion = block == BlockKind::kBottleneck ? BottleneckImpl::kExpansion : BasicBlockImpl::kExpansion;
  return (base_width << stage) * expansion;
}

ModelConfig ModelConfig::full() {
  ModelConfig cfg;
  cfg.visual.block = BlockKind::kBottleneck;
  cfg.visual.layers = {3, 4, 6, 3};
  cfg.visual.base_width = 64;
  cfg.textual = TextualConfig{};
  cfg.heads.embed_dim = 1024;
  cfg.heads.scales = {1, 2};
  cfg.input_size = 224;
  return cfg;
}

ModelConfig ModelConfig::toy(int vocab_size, int max_length) {
  ModelConfig cfg;
  cfg.visual.block = BlockKind::kBasic;
  cfg.visual.layers = {1, 1, 1, 1};
  cfg.visual.base_width = 8;
  cfg.textual.vocab_size = vocab_size;
  cfg.textual.max_length = max_length;
  cfg.textual.width = 32;
  cfg.textual.layers = 1;
  cfg.textual.heads = 4;
  cfg.textual.ffn_multiplier = 2;
  cfg.textual.dropout = 0.0;
  cfg.heads.embed_dim = 32;
  cfg.heads.scales = {1, 2};
  cfg.input_size = 64;
  return cfg;
}

const torch::Tensor& VisualFeatures::at_scale(int scale) const {
  switch (scale) {
    case 1: return stage_maps.at(3);
    case 2: return stage_maps.at(2);
    case 4: return stage_maps.at(1);
    default: throw std::invalid_argument("unsupported feature scale " + std::to_string(scale));
  }
}

namespace {

nn::Conv2d conv(int in, int out, int kernel, int stride) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, kernel).stride(stride).padding(kernel / 2).bias(false));
}

nn::Sequential make_downsample(int in, int out, int stride) {
  if (stride == 1 && in == out) return nullptr;
  return nn::Sequential(conv(in, out, 1, stride), nn::BatchNorm2d(out));
}

}  // namespace

BasicBlockImpl::BasicBlockImpl(int in_channels, int width, int stride) {
  conv1 = register_module("conv1", conv(in_channels, width, 3, stride));
  bn1 = register_module("bn1", nn::BatchNorm2d(width));
  conv2 = register_module("conv2", conv(width, width, 3, 1));
  bn2 = register_module("bn2", nn::BatchNorm2d(width));
  downsample = make_downsample(in_channels, width * kExpansion, stride);
  if (downsample) register_module("downsample", downsample);
}

torch::Tensor BasicBlockImpl::forward(const torch::Tensor& x) {
  auto out = torch::relu(bn1(conv1(x)));
  out = bn2(conv2(out));
  return torch::relu(out + (downsample ? downsample->forward(x) : x));
}

BottleneckImpl::BottleneckImpl(int in_channels, int width, int stride) {
  conv1 = register_module("conv1", conv(in_channels, width, 1, 1));
  bn1 = register_module("bn1", nn::BatchNorm2d(width));
  conv2 = register_module("conv2", conv(width, width, 3, stride));
  bn2 = register_module("bn2", nn::BatchNorm2d(width));
  conv3 = register_module("conv3", conv(width, width * kExpansion, 1, 1));
  bn3 = register_module("bn3", nn::BatchNorm2d(width * kExpansion));
  downsample = make_downsample(in_channels, width * kExpansion, stride);
  if (downsample) register_module("downsample", downsample);
}

torch::Tensor BottleneckImpl::forward(const torch::Tensor& x) {
  auto out = torch::relu(bn1(conv1(x)));
  out = torch::relu(bn2(conv2(out)));
  out = bn3(conv3(out));
  return torch::relu(out + (downsample ? downsample->forward(x) : x));
}

VisualBackboneImpl::VisualBackboneImpl(const VisualConfig& cfg) : cfg_(cfg) {
  if (cfg.layers.size() != 4) throw std::invalid_argument("visual backbone needs exactly four stages");
  stem_conv = register_module("stem_conv", conv(3, cfg.base_width, 7, 2));
  stem_bn = register_module("stem_bn", nn::BatchNorm2d(cfg.base_width));
  stem_pool = register_module("stem_pool", nn::MaxPool2d(nn::MaxPool2dOptions(3).stride(2).padding(1)));
  int in = cfg.base_width;
  for (int s = 0; s < 4; ++s) {
    nn::Sequential stage;
    const int width = cfg.base_width << s;
    for (int b = 0; b < cfg.layers[static_cast<std::size_t>(s)]; ++b) {
      const int stride = (b == 0 && s > 0) ? 2 : 1;
      if (cfg.block == BlockKind::kBottleneck) {
        stage->push_back(Bottleneck(in, width, stride));
      } else {
        stage->push_back(BasicBlock(in, width, stride));
      }
      in = cfg.stage_channels(s);
    }
    stages_.push_back(register_module("stage" + std::to_string(s + 1), stage));
  }
}

VisualFeatures VisualBackboneImpl::forward(const torch::Tensor& images) {
  if (images.dim() != 4 || images.size(1) != 3) {
    throw std::invalid_argument("visual backbone expects (N, 3, S, S) images");
  }
  if (images.size(2) != images.size(3) || images.size(2) % 32 != 0) {
    throw std::invalid_argument("visual backbone input must be square with side divisible by 32, got " +
                                std::to_string(images.size(2)) + "x" + std::to_string(images.size(3)));
  }
  auto x = stem_pool(torch::relu(stem_bn(stem_conv(images))));
  VisualFeatures out;
  for (auto& stage : stages_) {
    x = stage->forward(x);
    out.stage_maps.push_back(x);
  }
  out.final_map = out.stage_maps[3];
  out.penult_map = out.stage_maps[2];
  return out;
}

TextualBackboneImpl::TextualBackboneImpl(const TextualConfig& cfg) : cfg_(cfg) {
  if (cfg.width % cfg.heads != 0) throw std::invalid_argument("text width must be divisible by the head count");
  token_embedding = register_module("token_embedding", nn::Embedding(cfg.vocab_size, cfg.width));
  position_embedding = register_module("position_embedding", nn::Embedding(cfg.max_length, cfg.width));
  embedding_norm = register_module("embedding_norm", nn::LayerNorm(nn::LayerNormOptions({cfg.width})));
  auto layer = nn::TransformerEncoderLayerOptions(cfg.width, cfg.heads)
                   .dim_feedforward(cfg.width * cfg.ffn_multiplier)
                   .dropout(cfg.dropout)
                   .activation(torch::kGELU);
  encoder = register_module("encoder", nn::TransformerEncoder(nn::TransformerEncoderOptions(layer, cfg.layers)));
}

TextualFeatures TextualBackboneImpl::forward(const torch::Tensor& ids) {
  if (ids.dim() != 2 || ids.size(1) != cfg_.max_length) {
    throw std::invalid_argument("text backbone expects (N, " + std::to_string(cfg_.max_length) +
                                ") token ids, got length " + std::to_string(ids.dim() == 2 ? ids.size(1) : -1));
  }
  const auto positions = torch::arange(cfg_.max_length, ids.options().dtype(torch::kLong));
  auto x = token_embedding(ids) + position_embedding(positions).unsqueeze(0);
  x = embedding_norm(x);
  const auto pad = ids.eq(0);
  auto h = encoder->forward(x.transpose(0, 1), torch::Tensor(), pad);  // (L, N, D)
  return {h.permute({1, 2, 0}), pad};
}

torch::Tensor spatial_mean(const torch::Tensor& map) { return map.flatten(2).mean(2); }

torch::Tensor masked_sequence_mean(const torch::Tensor& seq, const torch::Tensor& pad_mask) {
  const auto keep = pad_mask.logical_not().to(seq.scalar_type()).unsqueeze(1);  // (N, 1, L)
  return (seq * keep).sum(2) / keep.sum(2).clamp_min(1.0);
}

torch::Tensor apply_channelwise(nn::Linear& linear, const torch::Tensor& x) {
  return linear(x.movedim(1, -1)).movedim(-1, 1);
}

ProjectionHeadsImpl::ProjectionHeadsImpl(const ModelConfig& cfg) {
  const int e = cfg.heads.embed_dim;
  contrastive_visual = register_module("contrastive_visual", nn::Linear(cfg.visual.out_channels(), e));
  contrastive_textual = register_module("contrastive_textual", nn::Linear(cfg.textual.width, e));
  localization_textual = register_module("localization_textual", nn::Linear(cfg.textual.width, e));
  for (int scale : cfg.heads.scales) {
    int stage = 3;
    switch (scale) {
      case 1: stage = 3; break;
      case 2: stage = 2; break;
      case 4: stage = 1; break;
      default: throw std::invalid_argument("unsupported supervision scale " + std::to_string(scale));
    }
    localization_visual.emplace(
        scale, register_module("localization_visual_" + std::to_string(scale),
                               nn::Linear(cfg.visual.stage_channels(stage), e)));
  }
}

ContrastiveEmbeddings ProjectionHeadsImpl::project_contrastive(const VisualFeatures& v, const TextualFeatures& t) {
  return {contrastive_visual(spatial_mean(v.final_map)),
          contrastive_textual(masked_sequence_mean(t.seq, t.pad_mask))};
}

LocalizationFeatures ProjectionHeadsImpl::project_localization(const VisualFeatures& v, const TextualFeatures& t,
                                                               const std::vector<int>& scales) {
  LocalizationFeatures out;
  out.textual = apply_channelwise(localization_textual, t.seq);
  for (int scale : scales) {
    auto it = localization_visual.find(scale);
    if (it == localization_visual.end()) {
      throw std::invalid_argument("no localization head for scale " + std::to_string(scale));
    }
    out.visual.emplace(scale, apply_channelwise(it->second, v.at_scale(scale)));
  }
  return out;
}

LocalizationFeatures ProjectionHeadsImpl::project_localization(const VisualFeatures& v, const TextualFeatures& t) {
  std::vector<int> scales;
  for (const auto& [scale, _] : localization_visual) scales.push_back(scale);
  return project_localization(v, t, scales);
}

LocTexModelImpl::LocTexModelImpl(const ModelConfig& cfg) : cfg_(cfg) {
  if (cfg.input_size % 32 != 0) throw std::invalid_argument("input size must be divisible by 32");
  visual = register_module("visual", VisualBackbone(cfg.visual));
  textual = register_module("textual", TextualBackbone(cfg.textual));
  heads = register_module("heads", ProjectionHeads(cfg));
}

ModelOutputs LocTexModelImpl::forward(const torch::Tensor& images, const torch::Tensor& ids, bool with_localization) {
  auto v = visual(images);
  auto t = textual(ids);
  ModelOutputs out;
  out.embeddings = heads->project_contrastive(v, t);
  if (with_localization) out.localization = heads->project_localization(v, t);
  out.textual = std::move(t);
  return out;
}

}  // namespace loctex
