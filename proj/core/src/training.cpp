#include "loctex/training.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "loctex/checkpoint.hpp"
#include "loctex/manifest.hpp"
#include "loctex/schedule.hpp"

namespace loctex {

namespace {

using json = nlohmann::json;

torch::Tensor bytes_to_tensor(const std::vector<std::uint8_t>& v, std::vector<std::int64_t> shape) {
  auto t = torch::empty(shape, torch::kUInt8);
  std::memcpy(t.data_ptr<std::uint8_t>(), v.data(), v.size());
  return t.to(torch::kFloat32);
}

void set_group_lrs(torch::optim::SGD& opt, const std::array<double, 3>& lrs) {
  auto& groups = opt.param_groups();
  for (std::size_t g = 0; g < groups.size(); ++g) {
    static_cast<torch::optim::SGDOptions&>(groups[g].options()).lr(lrs[g]);
  }
}

/// The config text with the run-location keys blanked, for resume checks.
std::string comparable_config(TrainConfig cfg) {
  cfg.output_dir.clear();
  cfg.dataset.clear();
  return cfg.to_ini();
}

std::string vocab_hash(const Vocabulary& vocab) { return sha256_hex(vocab.to_string()); }

std::string breakdown_text(const LossBreakdown& bd, double total) {
  std::ostringstream out;
  out << "total=" << total << " contrastive=" << bd.contrastive;
  for (const auto& [scale, v] : bd.localization) out << " localization@" << scale << "x=" << v;
  return out.str();
}

}  // namespace

std::string config_fingerprint(const TrainConfig& cfg) { return sha256_hex(comparable_config(cfg)); }

std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts) {
  std::vector<std::uint32_t> words;
  for (std::uint64_t p : parts) {
    words.push_back(static_cast<std::uint32_t>(p));
    words.push_back(static_cast<std::uint32_t>(p >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[1]) << 32) | out[0];
}

ModelConfig resolved_model_config(const TrainConfig& cfg, std::int64_t vocab_size) {
  ModelConfig m = cfg.model;
  m.textual.vocab_size = static_cast<int>(vocab_size);
  return m;
}

LocTexModel make_model(const ModelConfig& cfg, std::uint64_t seed) {
  torch::manual_seed(seed);
  return LocTexModel(cfg);
}

SampleGeometry geometry_for(const TrainConfig& cfg) {
  SampleGeometry g;
  g.input_size = cfg.model.input_size;
  g.max_length = static_cast<std::size_t>(cfg.model.textual.max_length);
  g.dilation = cfg.dilation;
  g.resolutions.clear();
  for (int s : cfg.loss.scales) g.resolutions.push_back(s * cfg.model.final_resolution());
  return g;
}

std::int64_t steps_per_epoch(std::size_t dataset_size, int batch_size) {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be positive");
  const auto n = static_cast<std::int64_t>(dataset_size);
  return n / batch_size + (n % batch_size >= 2 ? 1 : 0);
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::int64_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(derive_seed({seed, static_cast<std::uint64_t>(epoch)}));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

Batch collate(const std::vector<AugmentedSample>& samples, const std::vector<std::string>& sample_ids,
              const std::vector<int>& scales, int final_resolution) {
  if (samples.empty()) throw std::invalid_argument("collate: empty batch");
  Batch b;
  b.sample_ids = sample_ids;
  std::vector<torch::Tensor> images, ids;
  for (const auto& s : samples) {
    images.push_back(s.image);
    ids.push_back(torch::tensor(std::vector<std::int64_t>(s.tokens.ids.begin(), s.tokens.ids.end()), torch::kInt64));
  }
  b.images = torch::stack(images);
  b.ids = torch::stack(ids);
  for (int scale : scales) {
    const int res = scale * final_resolution;
    std::vector<torch::Tensor> targets, masks;
    for (const auto& s : samples) {
      const auto it = s.targets.find(res);
      if (it == s.targets.end()) throw std::invalid_argument("collate: sample lacks targets at resolution " + std::to_string(res));
      const RenderedAttention& r = it->second;
      targets.push_back(bytes_to_tensor(r.data, {r.length, res, res}));
      masks.push_back(bytes_to_tensor(r.token_mask, {r.length}));
    }
    b.targets[scale] = {torch::stack(targets), torch::stack(masks)};
  }
  return b;
}

std::unique_ptr<torch::optim::SGD> make_optimizer(LocTexModel& model, const TrainConfig& cfg) {
  const auto options = [&](double lr) { return torch::optim::SGDOptions(lr).momentum(cfg.momentum).weight_decay(cfg.weight_decay); };
  std::vector<torch::optim::OptimizerParamGroup> groups;
  for (torch::nn::Module* m : {static_cast<torch::nn::Module*>(model->visual.get()),
                               static_cast<torch::nn::Module*>(model->textual.get()),
                               static_cast<torch::nn::Module*>(model->heads.get())}) {
    groups.emplace_back(m->parameters());
  }
  auto opt = std::make_unique<torch::optim::SGD>(std::move(groups), options(cfg.lr_heads));
  // Group options equal to libtorch's own defaults (lr 0.001, momentum 0) are
  // replaced by the optimizer-wide ones at construction, so assign them here.
  const std::array<double, 3> lrs{cfg.lr_visual, cfg.lr_textual, cfg.lr_heads};
  for (std::size_t g = 0; g < 3; ++g) {
    opt->param_groups()[g].set_options(std::make_unique<torch::optim::SGDOptions>(options(lrs[g])));
  }
  return opt;
}

std::string StepRecord::to_json() const {
  json j;
  j["step"] = step;
  j["epoch"] = epoch;
  j["total"] = total;
  j["contrastive"] = contrastive;
  json loc = json::object();
  for (const auto& [scale, v] : localization) loc[std::to_string(scale) + "x"] = v;
  j["localization"] = loc;
  j["lr"] = {{"visual", lr_visual}, {"textual", lr_textual}, {"heads", lr_heads}};
  return j.dump();
}

std::string checkpoint_name(std::int64_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch_%04lld.pt", static_cast<long long>(epoch));
  return buf;
}

FitResult fit(const TrainConfig& cfg, const TrainingData& data, const Vocabulary& vocab, LocTexModel& model,
              const FitOptions& opts) {
  cfg.validate();
  if (model->config().textual.vocab_size != static_cast<int>(vocab.size())) {
    throw std::invalid_argument("fit: model vocabulary size " + std::to_string(model->config().textual.vocab_size) +
                                " differs from the tokenizer's " + std::to_string(vocab.size()));
  }
  const std::int64_t spe = steps_per_epoch(data.size(), cfg.batch_size);
  if (spe == 0) throw std::invalid_argument("fit: need at least two samples");
  const std::int64_t total_steps = spe * cfg.epochs;
  const std::int64_t warmup_steps = spe * cfg.warmup_epochs;
  const SampleGeometry geometry = geometry_for(cfg);
  const bool with_localization = cfg.loss.weight_localization > 0.0;
  const std::array<double, 3> peaks{cfg.lr_visual, cfg.lr_textual, cfg.lr_heads};

  auto optimizer = make_optimizer(model, cfg);

  RunManifest manifest;
  manifest.kind = "train";
  manifest.config_hash = config_fingerprint(cfg);
  manifest.vocab_hash = vocab_hash(vocab);
  manifest.dataset_fingerprint = opts.dataset_fingerprint;
  manifest.seed = cfg.seed;
  manifest.started_at = utc_timestamp();

  FitResult result;
  std::int64_t start_epoch = 0;
  if (!opts.resume.empty()) {
    const auto meta = load_checkpoint(opts.resume, model, optimizer.get());
    if (comparable_config(TrainConfig::from_ini(meta.config_ini)) != comparable_config(cfg)) {
      throw CheckpointError("resume: checkpoint " + opts.resume.string() + " was written with a different config");
    }
    if (meta.vocab_hash != manifest.vocab_hash) {
      throw CheckpointError("resume: checkpoint " + opts.resume.string() + " used a different vocabulary");
    }
    start_epoch = meta.epoch;
    result.steps = meta.step;
  }

  const bool write = !opts.output_dir.empty();
  std::ofstream metrics;
  if (write) {
    std::filesystem::create_directories(opts.output_dir / "checkpoints");
    cfg.save(opts.output_dir / "config.ini");
    metrics.open(opts.output_dir / "metrics.jsonl", opts.resume.empty() ? std::ios::trunc : std::ios::app);
    if (!metrics) throw std::runtime_error("cannot write " + (opts.output_dir / "metrics.jsonl").string());
  }

  auto save = [&](std::int64_t epochs_done) {
    if (!write) return;
    CheckpointMeta meta;
    meta.config_ini = cfg.to_ini();
    meta.vocab_size = static_cast<std::int64_t>(vocab.size());
    meta.vocab_hash = manifest.vocab_hash;
    meta.vocab_text = vocab.to_string();
    meta.epoch = epochs_done;
    meta.step = result.steps;
    manifest.finished_at = utc_timestamp();
    meta.manifest_json = manifest.to_json();
    result.last_checkpoint = opts.output_dir / "checkpoints" / checkpoint_name(epochs_done);
    save_checkpoint(result.last_checkpoint, model, optimizer.get(), meta);
  };

  const auto stop = [&] { return opts.max_steps >= 0 && result.steps >= opts.max_steps; };

  for (std::int64_t epoch = start_epoch; epoch < cfg.epochs && !stop(); ++epoch) {
    const auto order = epoch_order(data.size(), cfg.seed, epoch);
    double epoch_sum = 0.0;
    std::int64_t epoch_steps = 0;
    for (std::int64_t b = 0; b < spe && !stop(); ++b) {
      const std::size_t lo = static_cast<std::size_t>(b) * cfg.batch_size;
      const std::size_t hi = std::min(data.size(), lo + static_cast<std::size_t>(cfg.batch_size));
      std::vector<AugmentedSample> samples;
      std::vector<std::string> ids;
      for (std::size_t k = lo; k < hi; ++k) {
        const std::size_t index = order[k];
        const TrainingSample s = data.get(index);
        std::mt19937_64 rng(derive_seed({cfg.seed, static_cast<std::uint64_t>(epoch), index}));
        samples.push_back(augment(s.image, s.narrative, vocab, cfg.augment, geometry, rng));
        ids.push_back(s.id);
      }
      const Batch batch = collate(samples, ids, cfg.loss.scales, cfg.model.final_resolution());

      StepRecord rec;
      rec.step = result.steps;
      rec.epoch = epoch;
      std::array<double, 3> lrs{};
      for (std::size_t g = 0; g < 3; ++g) lrs[g] = lr_schedule(rec.step, total_steps, warmup_steps, peaks[g]);
      set_group_lrs(*optimizer, lrs);
      rec.lr_visual = lrs[0];
      rec.lr_textual = lrs[1];
      rec.lr_heads = lrs[2];

      torch::manual_seed(derive_seed({cfg.seed, static_cast<std::uint64_t>(rec.step), 0x64726f70ull}));
      model->train();
      const auto outputs = model->forward(batch.images, batch.ids, with_localization);
      const LossBreakdown bd = total_loss(outputs, batch.targets, cfg.loss);
      rec.total = bd.total_value();
      rec.contrastive = bd.contrastive;
      rec.localization = bd.localization;

      if (!std::isfinite(rec.total)) {
        std::string joined;
        for (const auto& id : ids) joined += (joined.empty() ? "" : ",") + id;
        const std::string what = "non-finite loss at step " + std::to_string(rec.step) + " (epoch " +
                                 std::to_string(epoch) + "): " + breakdown_text(bd, rec.total) + "; batch ids: " + joined;
        if (write) {
          json snap;
          snap["step"] = rec.step;
          snap["epoch"] = epoch;
          snap["batch_ids"] = ids;
          snap["breakdown"] = json::parse(rec.to_json());
          snap["breakdown"]["total"] = std::to_string(rec.total);  // NaN/inf are not JSON numbers
          std::ofstream(opts.output_dir / "nonfinite.json") << snap.dump(2) << '\n';
        }
        throw NonFiniteLossError(what, ids);
      }

      optimizer->zero_grad();
      bd.total.backward();
      optimizer->step();

      ++result.steps;
      epoch_sum += rec.total;
      ++epoch_steps;
      if (write && rec.step % cfg.log_every == 0) metrics << rec.to_json() << '\n' << std::flush;
      if (opts.on_step) opts.on_step(rec);
      result.log.push_back(std::move(rec));
    }
    if (epoch_steps == spe) {
      result.epoch_mean_total.push_back(epoch_sum / static_cast<double>(epoch_steps));
      const std::int64_t done = epoch + 1;
      if ((cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0) || done == cfg.epochs) save(done);
    }
  }

  if (write) {
    manifest.finished_at = utc_timestamp();
    manifest.save(opts.output_dir / layout::kManifest);
  }
  return result;
}

}  // namespace loctex
