#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>
#include <opencv2/imgproc.hpp>

#include "commands.hpp"
#include "loctex/checkpoint.hpp"
#include "loctex/dataset.hpp"
#include "loctex/evaluation.hpp"
#include "loctex/image.hpp"
#include "loctex/manifest.hpp"
#include "loctex/training.hpp"

namespace loctex::cli {

namespace {

using nlohmann::json;

const std::map<std::string, int>& colormaps() {
  static const std::map<std::string, int> table{
      {"jet", cv::COLORMAP_JET},         {"turbo", cv::COLORMAP_TURBO},     {"viridis", cv::COLORMAP_VIRIDIS},
      {"inferno", cv::COLORMAP_INFERNO}, {"magma", cv::COLORMAP_MAGMA},     {"plasma", cv::COLORMAP_PLASMA},
      {"hot", cv::COLORMAP_HOT},         {"parula", cv::COLORMAP_PARULA}};
  return table;
}

void require_checkpoint(const fs::path& p) {
  if (!fs::is_regular_file(p)) throw CheckpointError("checkpoint not found: " + p.string());
}

std::string format_double(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

/// Header `image<TAB>class...`, then one row per image with 0/1 labels.
/// Relative image paths resolve against the file's directory.
struct LabelTable {
  std::vector<std::string> classes;
  std::vector<fs::path> images;
  std::vector<std::vector<int>> labels;  // [class][sample]
};

LabelTable read_labels(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw InputError("label file not found: " + path.string());
  std::ifstream in(path);
  LabelTable t;
  std::string line;
  std::size_t line_no = 0;
  auto fields = [](const std::string& l) {
    std::vector<std::string> out;
    std::istringstream s(l);
    std::string f;
    while (std::getline(s, f, '\t')) out.push_back(f);
    return out;
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = fields(line);
    if (t.classes.empty() && t.images.empty()) {
      if (f.size() < 2) throw InputError(path.string() + ": header needs an image column and at least one class");
      t.classes.assign(f.begin() + 1, f.end());
      t.labels.resize(t.classes.size());
      continue;
    }
    if (f.size() != t.classes.size() + 1) {
      throw InputError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(t.classes.size() + 1) + " fields");
    }
    fs::path img(f[0]);
    if (img.is_relative()) img = path.parent_path() / img;
    t.images.push_back(img);
    for (std::size_t k = 0; k < t.classes.size(); ++k) {
      if (f[k + 1] != "0" && f[k + 1] != "1") {
        throw InputError(path.string() + ":" + std::to_string(line_no) + ": labels must be 0 or 1");
      }
      t.labels[k].push_back(f[k + 1] == "1");
    }
  }
  if (t.images.empty()) throw InputError(path.string() + ": no labelled images");
  return t;
}

FeatureMatrix features_of(LocTexModel& model, const std::vector<fs::path>& paths, int batch_size) {
  std::vector<cv::Mat> images;
  images.reserve(paths.size());
  for (const auto& p : paths) images.push_back(load_image_rgb(p));
  return to_feature_matrix(extract_features(model, images, batch_size));
}

}  // namespace

std::vector<std::string> colormap_names() {
  std::vector<std::string> names;
  for (const auto& [name, id] : colormaps()) names.push_back(name);
  return names;
}

void train(const TrainOptions& o, const Context& ctx) {
  if (!fs::is_regular_file(o.config)) throw InputError("config not found: " + o.config.string());
  TrainConfig cfg = TrainConfig::load(o.config);
  if (!o.data.empty()) cfg.dataset = o.data.string();
  if (!o.out.empty()) cfg.output_dir = o.out.string();
  if (o.seed) cfg.seed = *o.seed;
  cfg.validate();
  if (cfg.dataset.empty()) throw std::invalid_argument("train: no dataset; set data.dataset or pass --data");
  if (cfg.output_dir.empty()) throw std::invalid_argument("train: no output directory; set run.output_dir or pass --out");

  const fs::path dataset_dir(cfg.dataset);
  if (!fs::is_regular_file(dataset_dir / layout::kIndex)) {
    throw InputError("not a prepared dataset (no " + std::string(layout::kIndex) + "): " + dataset_dir.string());
  }
  const PreparedDataset data(dataset_dir);
  std::string dataset_fingerprint;
  if (fs::is_regular_file(dataset_dir / layout::kManifest)) {
    dataset_fingerprint = RunManifest::load(dataset_dir / layout::kManifest).dataset_fingerprint;
  }

  const fs::path out(cfg.output_dir);
  const fs::path manifest_path = out / layout::kManifest;
  if (o.resume.empty() && !o.force && fs::exists(manifest_path)) {
    const auto previous = RunManifest::load(manifest_path);
    const bool same = previous.kind == "train" && previous.config_hash == config_fingerprint(cfg) &&
                      previous.vocab_hash == sha256_hex(data.vocab().to_string()) &&
                      previous.dataset_fingerprint == dataset_fingerprint;
    if (same && fs::exists(out / "checkpoints" / checkpoint_name(cfg.epochs))) {
      ctx.out << "train: " << out.string() << " is up to date\n";
      return;
    }
    throw ConflictError("train: " + out.string() + " holds a different run; pass --force to overwrite");
  }
  if (!o.resume.empty()) require_checkpoint(o.resume);

  auto model = make_model(resolved_model_config(cfg, static_cast<std::int64_t>(data.vocab().size())), cfg.seed);
  FitOptions fo;
  fo.output_dir = out;
  fo.resume = o.resume;
  fo.dataset_fingerprint = dataset_fingerprint;
  if (ctx.verbose) {
    fo.on_step = [&](const StepRecord& rec) {
      if (rec.step % cfg.log_every == 0) ctx.progress(rec.to_json());
    };
  }
  ctx.progress("train: " + std::to_string(data.size()) + " samples, " + std::to_string(cfg.epochs) + " epochs");
  const auto result = fit(cfg, data, data.vocab(), model, fo);
  ctx.out << "train: " << result.steps << " steps";
  if (!result.epoch_mean_total.empty()) ctx.out << ", last epoch mean loss " << result.epoch_mean_total.back();
  ctx.out << " -> " << result.last_checkpoint.string() << '\n';
}

void probe(const ProbeOptions& o, const Context& ctx) {
  require_checkpoint(o.checkpoint);
  if (o.folds < 2) throw std::invalid_argument("--folds must be >= 2");
  if (o.batch_size < 1) throw std::invalid_argument("--batch-size must be positive");
  const auto train_set = read_labels(o.train);
  const auto test_set = read_labels(o.test);
  if (train_set.classes != test_set.classes) {
    throw InputError("train and test label files name different classes");
  }

  Fingerprint inputs;
  inputs.add("kind", "probe").add_file("checkpoint", o.checkpoint).add_file("train", o.train).add_file("test", o.test);
  for (const auto* set : {&train_set, &test_set}) {
    for (const auto& p : set->images) {
      if (!fs::is_regular_file(p)) throw InputError("image not found: " + p.string());
      inputs.add_file(p.string(), p);
    }
  }
  for (double c : o.costs) inputs.add("cost", format_double(c));
  inputs.add("folds", std::to_string(o.folds)).add("seed", std::to_string(o.seed));
  const std::string input_hash = inputs.hex();

  if (!o.force && fs::is_regular_file(o.out)) {
    try {
      std::ifstream in(o.out);
      const json previous = json::parse(in);
      const auto m = RunManifest::from_json(previous.at("manifest").dump());
      if (m.kind == "probe" && m.config_hash == input_hash) {
        ctx.out << "probe: " << o.out.string() << " is up to date\n";
        return;
      }
    } catch (const std::exception&) {
      // unreadable previous report: recompute
    }
  }

  RunManifest manifest;
  manifest.kind = "probe";
  manifest.config_hash = input_hash;
  manifest.seed = o.seed;
  manifest.started_at = utc_timestamp();

  auto loaded = load_model(o.checkpoint);
  manifest.vocab_hash = loaded.meta.vocab_hash;
  ctx.progress("probe: extracting features for " + std::to_string(train_set.images.size()) + " + " +
               std::to_string(test_set.images.size()) + " images");
  const auto train_x = features_of(loaded.model, train_set.images, o.batch_size);
  const auto test_x = features_of(loaded.model, test_set.images, o.batch_size);

  loctex::ProbeOptions po;
  po.costs = o.costs;
  po.folds = o.folds;
  po.seed = o.seed;
  po.class_names = train_set.classes;
  const auto result = linear_probe(train_x, train_set.labels, test_x, test_set.labels, po);
  for (const auto& w : result.warnings) ctx.err << "probe: " << w << '\n';

  manifest.finished_at = utc_timestamp();
  json report = json::parse(result.to_json());
  report["checkpoint"] = fs::absolute(o.checkpoint).string();
  report["manifest"] = json::parse(manifest.to_json());
  if (o.out.has_parent_path()) fs::create_directories(o.out.parent_path());
  std::ofstream(o.out) << report.dump(2) << '\n';
  ctx.out << "probe: mean AP " << result.mean_ap << " over " << result.classes.size() << " classes -> "
          << o.out.string() << '\n';
}

void visualize(const VisualizeOptions& o, const Context& ctx) {
  require_checkpoint(o.checkpoint);
  if (!fs::is_regular_file(o.image)) throw InputError("image not found: " + o.image.string());
  if (o.alpha < 0.0 || o.alpha > 1.0) throw std::invalid_argument("--alpha must be in [0, 1]");
  const auto cmap = colormaps().find(o.colormap);
  if (cmap == colormaps().end()) throw std::invalid_argument("unknown colormap " + o.colormap);

  Fingerprint inputs;
  inputs.add("kind", "visualize")
      .add_file("checkpoint", o.checkpoint)
      .add_file("image", o.image)
      .add("caption", o.caption)
      .add("alpha", format_double(o.alpha))
      .add("colormap", o.colormap)
      .add("scale", std::to_string(o.scale));
  for (const auto& w : o.words) inputs.add("word", w);
  const std::string input_hash = inputs.hex();
  const fs::path manifest_path = o.out / layout::kManifest;
  if (!o.force && up_to_date(manifest_path, "visualize", input_hash) && fs::exists(o.out / "contact_sheet.png")) {
    ctx.out << "visualize: " << o.out.string() << " is up to date\n";
    return;
  }

  RunManifest manifest;
  manifest.kind = "visualize";
  manifest.config_hash = input_hash;
  manifest.started_at = utc_timestamp();
  auto loaded = load_model(o.checkpoint);
  manifest.vocab_hash = loaded.meta.vocab_hash;

  loctex::VisualizeOptions vo;
  vo.scale = o.scale;
  vo.overlay.alpha = o.alpha;
  vo.overlay.colormap = cmap->second;
  vo.words = o.words;
  const auto result = visualize_attention(loaded.model, loaded.vocab, load_image_rgb(o.image), o.caption, o.out, vo);
  manifest.finished_at = utc_timestamp();
  manifest.save(manifest_path);
  ctx.out << "visualize: " << result.token_files.size() << " token overlays -> " << result.contact_sheet.string()
          << '\n';
}

}  // namespace loctex::cli
