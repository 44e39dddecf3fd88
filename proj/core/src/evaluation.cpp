#include "loctex/evaluation.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

#include <opencv2/imgcodecs.hpp>

#include "loctex/annotations.hpp"
#include "loctex/image.hpp"
#include "loctex/losses.hpp"
#include "loctex/trace_render.hpp"
#include "loctex/training.hpp"

namespace loctex {

namespace {

std::string model_signature(const ModelConfig& m) {
  TrainConfig cfg;
  cfg.model = m;
  std::string ini = cfg.to_ini();
  return ini.substr(0, ini.find("[loss]")) + "vocab_size = " + std::to_string(m.textual.vocab_size);
}

/// File-name-safe token text without the end-of-word marker.
std::string safe_name(std::string_view token) {
  if (token.ends_with(kEndOfWord)) token.remove_suffix(kEndOfWord.size());
  std::string out;
  for (char c : token) out += std::isalnum(static_cast<unsigned char>(c)) ? c : '_';
  return out;
}

}  // namespace

LoadedModel load_model(const std::filesystem::path& checkpoint, const ModelConfig* expected) {
  LoadedModel out;
  const auto meta = read_checkpoint_meta(checkpoint);
  out.config = TrainConfig::from_ini(meta.config_ini);
  const ModelConfig m = resolved_model_config(out.config, meta.vocab_size);
  if (expected && model_signature(*expected) != model_signature(m)) {
    throw CheckpointError("checkpoint " + checkpoint.string() + " holds a different model config");
  }
  out.model = LocTexModel(m);
  out.meta = load_checkpoint(checkpoint, out.model);
  out.model->eval();
  if (out.meta.vocab_text.empty()) {
    throw CheckpointError("checkpoint " + checkpoint.string() + " carries no vocabulary");
  }
  std::istringstream vocab_text(out.meta.vocab_text);
  out.vocab = Vocabulary::read(vocab_text);
  return out;
}

torch::Tensor extract_features(LocTexModel& model, const std::vector<cv::Mat>& images, int batch_size) {
  if (batch_size < 1) throw std::invalid_argument("extract_features: batch_size must be positive");
  torch::NoGradGuard no_grad;
  model->eval();
  const int size = model->config().input_size;
  std::vector<torch::Tensor> rows;
  for (std::size_t lo = 0; lo < images.size(); lo += batch_size) {
    const std::size_t hi = std::min(images.size(), lo + static_cast<std::size_t>(batch_size));
    std::vector<torch::Tensor> batch;
    for (std::size_t i = lo; i < hi; ++i) batch.push_back(image_to_tensor(resize_square(images[i], size)));
    const auto feats = model->visual->forward(torch::stack(batch));
    rows.push_back(spatial_mean(feats.final_map));
  }
  if (rows.empty()) return torch::empty({0, model->config().visual.out_channels()});
  return torch::cat(rows);
}

FeatureMatrix to_feature_matrix(const torch::Tensor& features) {
  const auto f = features.to(torch::kFloat64).contiguous();
  FeatureMatrix m(static_cast<std::size_t>(f.size(0)), static_cast<std::size_t>(f.size(1)));
  std::copy_n(f.data_ptr<double>(), m.data.size(), m.data.begin());
  return m;
}

torch::Tensor predict_attention(LocTexModel& model, const cv::Mat& rgb, const TokenizedCaption& tokens, int scale) {
  torch::NoGradGuard no_grad;
  model->eval();
  const auto image = image_to_tensor(resize_square(rgb, model->config().input_size)).unsqueeze(0);
  const auto ids = torch::tensor(std::vector<std::int64_t>(tokens.ids.begin(), tokens.ids.end()), torch::kInt64).unsqueeze(0);
  const auto out = model->forward(image, ids, true);
  const auto it = out.localization.visual.find(scale);
  if (it == out.localization.visual.end()) {
    throw std::invalid_argument("model has no localization head at scale " + std::to_string(scale));
  }
  return attention_map(out.localization.textual, it->second)[0];
}

cv::Mat resize_attention(const torch::Tensor& slice, int size) {
  if (slice.dim() != 2) throw std::invalid_argument("resize_attention: expected an (H, W) slice");
  const auto s = slice.to(torch::kFloat32).contiguous();
  const cv::Mat src(static_cast<int>(s.size(0)), static_cast<int>(s.size(1)), CV_32F, s.data_ptr<float>());
  cv::Mat out;
  cv::resize(src, out, cv::Size(size, size), 0, 0, cv::INTER_LINEAR);
  return out;
}

cv::Mat overlay_attention(const cv::Mat& rgb, const torch::Tensor& slice, const OverlayOptions& opts) {
  if (rgb.type() != CV_32FC3 || rgb.rows != rgb.cols) {
    throw std::invalid_argument("overlay_attention: expected a square RGB float image");
  }
  if (!(opts.alpha >= 0.0 && opts.alpha <= 1.0)) throw std::invalid_argument("overlay_attention: alpha must lie in [0, 1]");
  cv::Mat heat = resize_attention(slice, rgb.cols);
  double peak = 0.0;
  cv::minMaxLoc(heat, nullptr, &peak);
  if (peak > 0.0) heat /= peak;
  cv::Mat heat8, colored_bgr, colored;
  heat.convertTo(heat8, CV_8U, 255.0);
  cv::applyColorMap(heat8, colored_bgr, opts.colormap);
  colored = bgr8_to_rgb_float(colored_bgr);
  cv::Mat out;
  cv::addWeighted(rgb, 1.0 - opts.alpha, colored, opts.alpha, 0.0, out);
  return out;
}

VisualizeResult visualize_attention(LocTexModel& model, const Vocabulary& vocab, const cv::Mat& rgb,
                                    const std::string& caption, const std::filesystem::path& out_dir,
                                    const VisualizeOptions& opts) {
  const auto words = split_whitespace(caption);
  std::vector<bool> selected(words.size(), opts.words.empty());
  for (const auto& want : opts.words) {
    const std::string key = ascii_lower(strip_punctuation(want));
    bool found = false;
    for (std::size_t w = 0; w < words.size(); ++w) {
      if (ascii_lower(strip_punctuation(words[w])) == key) selected[w] = found = true;
    }
    if (!found) throw std::invalid_argument("visualize: word '" + want + "' is not in the caption");
  }

  EncodeOptions enc;
  enc.max_length = static_cast<std::size_t>(model->config().textual.max_length);
  const auto tokens = encode_words(words, vocab, enc);
  const auto attention = predict_attention(model, rgb, tokens, opts.scale);
  const cv::Mat image = resize_square(rgb, model->config().input_size);

  std::filesystem::create_directories(out_dir);
  VisualizeResult result;
  std::vector<cv::Mat> tiles{image};
  for (std::size_t l = 0; l < tokens.ids.size(); ++l) {
    const auto w = tokens.word_alignment[l];
    if (w == kNoWord || !selected[static_cast<std::size_t>(w)]) continue;
    const cv::Mat overlay = overlay_attention(image, attention[static_cast<std::int64_t>(l)], opts.overlay);
    char prefix[32];
    std::snprintf(prefix, sizeof prefix, "token_%02zu_", l);
    const auto path = out_dir / (prefix + safe_name(vocab.token_of(tokens.ids[l])) + ".png");
    if (!cv::imwrite(path.string(), rgb_float_to_bgr8(overlay))) throw std::runtime_error("cannot write " + path.string());
    result.token_files.push_back(path);
    tiles.push_back(overlay);
  }

  // Contact sheet: the input followed by every overlay, up to 8 per row.
  const int cols = std::min<int>(8, static_cast<int>(tiles.size()));
  const int rows = (static_cast<int>(tiles.size()) + cols - 1) / cols;
  const int s = image.cols;
  cv::Mat sheet(rows * s, cols * s, CV_32FC3, cv::Scalar::all(1.0));
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    tiles[i].copyTo(sheet(cv::Rect(static_cast<int>(i % cols) * s, static_cast<int>(i / cols) * s, s, s)));
  }
  result.contact_sheet = out_dir / "contact_sheet.png";
  if (!cv::imwrite(result.contact_sheet.string(), rgb_float_to_bgr8(sheet))) {
    throw std::runtime_error("cannot write " + result.contact_sheet.string());
  }
  return result;
}

}  // namespace loctex
