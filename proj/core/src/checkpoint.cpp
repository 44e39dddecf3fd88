#include "loctex/checkpoint.hpp"

#include <map>
#include <vector>

namespace loctex {

namespace {

void write_meta(torch::serialize::OutputArchive& ar, const CheckpointMeta& meta) {
  ar.write("meta/format_version", c10::IValue(meta.format_version));
  ar.write("meta/config_ini", c10::IValue(meta.config_ini));
  ar.write("meta/vocab_size", c10::IValue(meta.vocab_size));
  ar.write("meta/vocab_hash", c10::IValue(meta.vocab_hash));
  ar.write("meta/vocab_text", c10::IValue(meta.vocab_text));
  ar.write("meta/epoch", c10::IValue(meta.epoch));
  ar.write("meta/step", c10::IValue(meta.step));
  ar.write("meta/manifest", c10::IValue(meta.manifest_json));
}

CheckpointMeta read_meta(torch::serialize::InputArchive& ar) {
  CheckpointMeta meta;
  c10::IValue v;
  auto get = [&](const char* key) -> const c10::IValue& {
    if (!ar.try_read(key, v)) throw CheckpointError(std::string("checkpoint lacks ") + key);
    return v;
  };
  meta.format_version = get("meta/format_version").toInt();
  if (meta.format_version != CheckpointMeta::kFormatVersion) {
    throw CheckpointError("unsupported checkpoint format version " + std::to_string(meta.format_version));
  }
  meta.config_ini = get("meta/config_ini").toStringRef();
  meta.vocab_size = get("meta/vocab_size").toInt();
  meta.vocab_hash = get("meta/vocab_hash").toStringRef();
  meta.vocab_text = get("meta/vocab_text").toStringRef();
  meta.epoch = get("meta/epoch").toInt();
  meta.step = get("meta/step").toInt();
  meta.manifest_json = get("meta/manifest").toStringRef();
  return meta;
}

torch::serialize::InputArchive open(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) throw CheckpointError("checkpoint not found: " + path.string());
  torch::serialize::InputArchive ar;
  try {
    ar.load_from(path.string());
  } catch (const c10::Error& e) {
    throw CheckpointError("cannot read checkpoint " + path.string() + ": " + e.what_without_backtrace());
  }
  return ar;
}

std::map<std::string, std::vector<std::int64_t>> shapes(torch::nn::Module& m) {
  std::map<std::string, std::vector<std::int64_t>> out;
  for (const auto& p : m.named_parameters()) out[p.key()] = p.value().sizes().vec();
  for (const auto& b : m.named_buffers()) out[b.key()] = b.value().sizes().vec();
  return out;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, LocTexModel& model, torch::optim::Optimizer* optimizer,
                     const CheckpointMeta& meta) {
  torch::serialize::OutputArchive ar;
  write_meta(ar, meta);
  torch::serialize::OutputArchive model_ar;
  model->save(model_ar);
  ar.write("model", model_ar);
  if (optimizer) {
    torch::serialize::OutputArchive opt_ar;
    optimizer->save(opt_ar);
    ar.write("optimizer", opt_ar);
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // Write to a sibling and rename so an interrupted save never leaves a truncated file.
  const auto tmp = path.string() + ".tmp";
  ar.save_to(tmp);
  std::filesystem::rename(tmp, path);
}

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path) {
  auto ar = open(path);
  return read_meta(ar);
}

CheckpointMeta load_checkpoint(const std::filesystem::path& path, LocTexModel& model,
                               torch::optim::Optimizer* optimizer) {
  auto ar = open(path);
  const auto meta = read_meta(ar);
  try {
    torch::serialize::InputArchive model_ar;
    ar.read("model", model_ar);
    // Archive reads resize tensors in place, so compare shapes explicitly.
    const auto expected = shapes(*model);
    model->load(model_ar);
    if (shapes(*model) != expected) {
      throw CheckpointError("checkpoint " + path.string() + " has tensor shapes that differ from the model");
    }
    if (optimizer) {
      torch::serialize::InputArchive opt_ar;
      if (!ar.try_read("optimizer", opt_ar)) throw CheckpointError("checkpoint has no optimizer state");
      optimizer->load(opt_ar);
    }
  } catch (const c10::Error& e) {
    throw CheckpointError("checkpoint " + path.string() + " does not match the model: " + e.what_without_backtrace());
  }
  return meta;
}

}  // namespace loctex
