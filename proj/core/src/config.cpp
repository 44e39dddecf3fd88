#include "loctex/config.hpp"

#include <algorithm>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace loctex {

namespace pt = boost::property_tree;

namespace {

std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::vector<int> parse_ints(const std::string& key, const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (item.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw std::invalid_argument("config: " + key + " expects comma-separated integers, got '" + text + "'");
    }
  }
  return out;
}

const char* block_name(BlockKind k) { return k == BlockKind::kBottleneck ? "bottleneck" : "basic"; }

BlockKind block_from_name(const std::string& name) {
  if (name == "basic") return BlockKind::kBasic;
  if (name == "bottleneck") return BlockKind::kBottleneck;
  throw std::invalid_argument("config: model.visual_block must be basic or bottleneck");
}

/// Typed reader that remembers which keys were consumed.
class Reader {
 public:
  explicit Reader(const pt::ptree& tree) : tree_(tree) {}

  template <typename T>
  void get(const std::string& path, T& value) {
    seen_.insert(path);
    auto node = tree_.get_optional<std::string>(pt::ptree::path_type(path, '.'));
    if (!node) return;
    try {
      value = convert<T>(*node);
    } catch (const std::exception&) {
      throw std::invalid_argument("config: bad value '" + *node + "' for " + path);
    }
  }

  std::optional<std::string> raw(const std::string& path) {
    seen_.insert(path);
    auto node = tree_.get_optional<std::string>(pt::ptree::path_type(path, '.'));
    if (!node) return std::nullopt;
    return *node;
  }

  void reject_unknown() const {
    for (const auto& [section, body] : tree_) {
      if (body.empty()) throw std::invalid_argument("config: key '" + section + "' outside a section");
      for (const auto& [key, _] : body) {
        const std::string full = section + "." + key;
        if (!seen_.contains(full)) throw std::invalid_argument("config: unknown key " + full);
      }
    }
  }

 private:
  template <typename T>
  static T convert(const std::string& s) {
    if constexpr (std::is_same_v<T, bool>) {
      if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
      if (s == "false" || s == "0" || s == "no" || s == "off") return false;
      throw std::invalid_argument(s);
    } else if constexpr (std::is_same_v<T, std::string>) {
      return s;
    } else {
      std::istringstream in(s);
      T v{};
      in >> v;
      if (in.fail() || !(in >> std::ws).eof()) throw std::invalid_argument(s);
      return v;
    }
  }

  const pt::ptree& tree_;
  std::set<std::string> seen_;
};

}  // namespace

TrainConfig TrainConfig::full() {
  TrainConfig cfg;
  cfg.model = ModelConfig::full();
  cfg.batch_size = 1024;
  cfg.epochs = 600;
  cfg.warmup_epochs = 20;
  cfg.lr_visual = 0.4;
  cfg.lr_textual = 0.002;
  cfg.lr_heads = 0.4;
  return cfg;
}

TrainConfig TrainConfig::toy() {
  TrainConfig cfg;
  cfg.model = ModelConfig::toy(0);
  cfg.batch_size = 32;
  cfg.epochs = 200;
  cfg.warmup_epochs = 20;
  // The contrastive term is summed over the batch, so the full-scale rates are
  // far too large for 200 steps on the toy model.
  cfg.lr_visual = 0.005;
  cfg.lr_textual = 0.001;
  cfg.lr_heads = 0.01;
  cfg.loss.denominator = DenominatorMode::kStandard;
  return cfg;
}

void TrainConfig::validate() const {
  loss.validate();
  augment.validate();
  if (batch_size < 1) throw std::invalid_argument("config: batch_size must be positive");
  if (epochs < 1) throw std::invalid_argument("config: epochs must be positive");
  if (warmup_epochs < 0 || warmup_epochs >= epochs) {
    throw std::invalid_argument("config: warmup_epochs must lie in [0, epochs)");
  }
  if (!(lr_visual > 0 && lr_textual > 0 && lr_heads > 0)) {
    throw std::invalid_argument("config: all learning rates must be positive");
  }
  if (momentum < 0 || weight_decay < 0) throw std::invalid_argument("config: momentum and weight_decay must be >= 0");
  if (model.input_size < 32 || model.input_size % 32 != 0) {
    throw std::invalid_argument("config: model.input_size must be a positive multiple of 32");
  }
  if (model.textual.max_length < 3) throw std::invalid_argument("config: model.max_length must be at least 3");
  if (model.textual.width % model.textual.heads != 0) {
    throw std::invalid_argument("config: model.text_width must be divisible by model.text_heads");
  }
  for (int s : loss.scales) {
    if (std::find(model.heads.scales.begin(), model.heads.scales.end(), s) == model.heads.scales.end()) {
      throw std::invalid_argument("config: loss scale " + std::to_string(s) + " has no localization head");
    }
  }
  if (dilation < 0) throw std::invalid_argument("config: data.dilation must be >= 0");
  if (checkpoint_every < 0 || log_every < 1) {
    throw std::invalid_argument("config: checkpoint_every must be >= 0 and log_every >= 1");
  }
}

std::string TrainConfig::to_ini() const {
  std::ostringstream out;
  out.precision(17);
  const auto& m = model;
  out << "[model]\n"
      << "input_size = " << m.input_size << "\n"
      << "visual_block = " << block_name(m.visual.block) << "\n"
      << "visual_layers = " << join_ints(m.visual.layers) << "\n"
      << "visual_width = " << m.visual.base_width << "\n"
      << "text_width = " << m.textual.width << "\n"
      << "text_layers = " << m.textual.layers << "\n"
      << "text_heads = " << m.textual.heads << "\n"
      << "text_ffn_multiplier = " << m.textual.ffn_multiplier << "\n"
      << "text_dropout = " << m.textual.dropout << "\n"
      << "max_length = " << m.textual.max_length << "\n"
      << "embed_dim = " << m.heads.embed_dim << "\n"
      << "scales = " << join_ints(m.heads.scales) << "\n\n";
  out << "[loss]\n"
      << "tau = " << loss.tau << "\n"
      << "denominator = " << to_string(loss.denominator) << "\n"
      << "symmetric = " << (loss.symmetric ? "true" : "false") << "\n"
      << "scales = " << join_ints(loss.scales) << "\n"
      << "weight_contrastive = " << loss.weight_contrastive << "\n"
      << "weight_localization = " << loss.weight_localization << "\n"
      << "epsilon_norm = " << loss.epsilon_norm << "\n\n";
  out << "[optim]\n"
      << "batch_size = " << batch_size << "\n"
      << "epochs = " << epochs << "\n"
      << "warmup_epochs = " << warmup_epochs << "\n"
      << "lr_visual = " << lr_visual << "\n"
      << "lr_textual = " << lr_textual << "\n"
      << "lr_heads = " << lr_heads << "\n"
      << "momentum = " << momentum << "\n"
      << "weight_decay = " << weight_decay << "\n\n";
  const auto& a = augment;
  auto b = [](bool v) { return v ? "true" : "false"; };
  out << "[augment]\n"
      << "random_crop = " << b(a.random_crop) << "\n"
      << "crop_min_scale = " << a.crop_min_scale << "\n"
      << "flip = " << b(a.flip) << "\n"
      << "flip_probability = " << a.flip_probability << "\n"
      << "color_jitter = " << b(a.color_jitter) << "\n"
      << "brightness = " << a.brightness << "\n"
      << "contrast = " << a.contrast << "\n"
      << "saturation = " << a.saturation << "\n"
      << "caption_crop = " << b(a.caption_crop) << "\n\n";
  out << "[data]\n"
      << "dataset = " << dataset << "\n"
      << "dilation = " << dilation << "\n\n";
  out << "[run]\n"
      << "seed = " << seed << "\n"
      << "output_dir = " << output_dir << "\n"
      << "checkpoint_every = " << checkpoint_every << "\n"
      << "log_every = " << log_every << "\n";
  return out.str();
}

TrainConfig TrainConfig::from_ini(const std::string& text) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  Reader r(tree);

  TrainConfig cfg = toy();
  if (auto preset = r.raw("model.preset")) {
    if (*preset == "full") {
      cfg = full();
    } else if (*preset != "toy") {
      throw std::invalid_argument("config: model.preset must be toy or full");
    }
  }
  auto& m = cfg.model;
  r.get("model.input_size", m.input_size);
  if (auto block = r.raw("model.visual_block")) m.visual.block = block_from_name(*block);
  if (auto layers = r.raw("model.visual_layers")) m.visual.layers = parse_ints("model.visual_layers", *layers);
  r.get("model.visual_width", m.visual.base_width);
  r.get("model.text_width", m.textual.width);
  r.get("model.text_layers", m.textual.layers);
  r.get("model.text_heads", m.textual.heads);
  r.get("model.text_ffn_multiplier", m.textual.ffn_multiplier);
  r.get("model.text_dropout", m.textual.dropout);
  r.get("model.max_length", m.textual.max_length);
  r.get("model.embed_dim", m.heads.embed_dim);
  if (auto scales = r.raw("model.scales")) m.heads.scales = parse_ints("model.scales", *scales);

  r.get("loss.tau", cfg.loss.tau);
  if (auto mode = r.raw("loss.denominator")) cfg.loss.denominator = denominator_mode_from_string(*mode);
  r.get("loss.symmetric", cfg.loss.symmetric);
  if (auto scales = r.raw("loss.scales")) cfg.loss.scales = parse_ints("loss.scales", *scales);
  r.get("loss.weight_contrastive", cfg.loss.weight_contrastive);
  r.get("loss.weight_localization", cfg.loss.weight_localization);
  r.get("loss.epsilon_norm", cfg.loss.epsilon_norm);

  r.get("optim.batch_size", cfg.batch_size);
  r.get("optim.epochs", cfg.epochs);
  r.get("optim.warmup_epochs", cfg.warmup_epochs);
  r.get("optim.lr_visual", cfg.lr_visual);
  r.get("optim.lr_textual", cfg.lr_textual);
  r.get("optim.lr_heads", cfg.lr_heads);
  r.get("optim.momentum", cfg.momentum);
  r.get("optim.weight_decay", cfg.weight_decay);

  auto& a = cfg.augment;
  r.get("augment.random_crop", a.random_crop);
  r.get("augment.crop_min_scale", a.crop_min_scale);
  r.get("augment.flip", a.flip);
  r.get("augment.flip_probability", a.flip_probability);
  r.get("augment.color_jitter", a.color_jitter);
  r.get("augment.brightness", a.brightness);
  r.get("augment.contrast", a.contrast);
  r.get("augment.saturation", a.saturation);
  r.get("augment.caption_crop", a.caption_crop);

  r.get("data.dataset", cfg.dataset);
  r.get("data.dilation", cfg.dilation);

  r.get("run.seed", cfg.seed);
  r.get("run.output_dir", cfg.output_dir);
  r.get("run.checkpoint_every", cfg.checkpoint_every);
  r.get("run.log_every", cfg.log_every);

  r.reject_unknown();
  cfg.validate();
  return cfg;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_ini(buf.str());
}

void TrainConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_ini();
}

}  // namespace loctex
