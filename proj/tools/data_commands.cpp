#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "commands.hpp"
#include "loctex/annotations.hpp"
#include "loctex/dataset.hpp"
#include "loctex/manifest.hpp"
#include "loctex/synthetic.hpp"
#include "loctex/trace_render.hpp"

namespace loctex::cli {

namespace {

using nlohmann::json;

constexpr std::size_t kMaxReportedProblems = 10;

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::is_regular_file(p)) throw InputError(what + " not found: " + p.string());
}

void check_resolutions(const std::vector<int>& res, const std::string& flag) {
  for (int r : res) {
    if (r < 1) throw std::invalid_argument(flag + ": resolutions must be positive, got " + std::to_string(r));
  }
  if (std::set<int>(res.begin(), res.end()).size() != res.size()) {
    throw std::invalid_argument(flag + ": duplicate resolution");
  }
}

ParseResult parse_file(const fs::path& path, bool strict) {
  require_file(path, "annotation file");
  std::ifstream in(path, std::ios::binary);
  ParseOptions opts;
  opts.strict = strict;
  return parse_narratives(in, opts);
}

/// image_path (relative to the images root unless absolute), else
/// <image_id>.{jpg,jpeg,png} under the root. Empty when nothing exists.
fs::path find_image(const fs::path& root, const LocalizedNarrative& n) {
  if (!n.image_path.empty()) {
    fs::path p(n.image_path);
    if (p.is_relative()) p = root / p;
    return fs::is_regular_file(p) ? fs::absolute(p) : fs::path{};
  }
  for (const char* ext : {".jpg", ".jpeg", ".png"}) {
    const fs::path p = root / (n.image_id + ext);
    if (fs::is_regular_file(p)) return fs::absolute(p);
  }
  return {};
}

void report_problems(const Context& ctx, const std::string& cmd, std::size_t kept, std::size_t total,
                     const std::vector<std::string>& problems) {
  if (problems.empty()) return;
  ctx.err << cmd << ": kept " << kept << " of " << total << " records, " << problems.size() << " rejected\n";
  for (std::size_t i = 0; i < std::min(problems.size(), kMaxReportedProblems); ++i) {
    ctx.err << "  " << problems[i] << '\n';
  }
  if (problems.size() > kMaxReportedProblems) {
    ctx.err << "  ... " << problems.size() - kMaxReportedProblems << " more\n";
  }
}

RunManifest start_manifest(const std::string& kind, const std::string& input_hash) {
  RunManifest m;
  m.kind = kind;
  m.config_hash = input_hash;
  m.started_at = utc_timestamp();
  return m;
}

void finish_manifest(RunManifest& m, const fs::path& path) {
  m.finished_at = utc_timestamp();
  m.save(path);
}

fs::path sidecar(const fs::path& artifact) { return fs::path(artifact.string() + ".manifest.json"); }

std::vector<std::string> read_corpus(const fs::path& path) {
  std::vector<std::string> corpus;
  if (path.extension() == ".jsonl") {
    for (auto& n : parse_file(path, false).narratives) corpus.push_back(std::move(n.caption));
    return corpus;
  }
  require_file(path, "corpus");
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (!split_whitespace(line).empty()) corpus.push_back(line);
  }
  return corpus;
}

/// Row-major run lengths, the first run counting zeros.
GridMask decode_rle(const std::vector<std::int64_t>& counts, int height, int width) {
  GridMask mask(height, width);
  std::size_t pos = 0;
  std::uint8_t value = 0;
  for (std::int64_t c : counts) {
    if (c < 0 || pos + static_cast<std::size_t>(c) > mask.data.size()) {
      throw std::invalid_argument("run lengths exceed the mask size");
    }
    std::fill_n(mask.data.begin() + static_cast<std::ptrdiff_t>(pos), c, value);
    pos += static_cast<std::size_t>(c);
    value ^= 1;
  }
  if (pos != mask.data.size()) throw std::invalid_argument("run lengths do not cover the mask");
  return mask;
}

std::map<std::string, InstanceMaskSet> read_masks(const fs::path& path) {
  require_file(path, "mask file");
  std::ifstream in(path);
  std::map<std::string, InstanceMaskSet> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (split_whitespace(line).empty()) continue;
    try {
      const json rec = json::parse(line);
      InstanceMaskSet set;
      set.height = rec.at("height").get<int>();
      set.width = rec.at("width").get<int>();
      if (set.height < 1 || set.width < 1) throw std::invalid_argument("non-positive mask size");
      for (const auto& inst : rec.at("instances")) {
        set.instances.push_back({ascii_lower(inst.at("category").get<std::string>()),
                                 decode_rle(inst.at("counts").get<std::vector<std::int64_t>>(), set.height,
                                            set.width)});
      }
      out[rec.at("image_id").get<std::string>()] = std::move(set);
    } catch (const std::exception& e) {
      throw ParseError(line_no, std::string("mask record: ") + e.what());
    }
  }
  return out;
}

}  // namespace

Fingerprint& Fingerprint::add(const std::string& key, const std::string& value) {
  text_ << key << '=' << value << '\n';
  return *this;
}

Fingerprint& Fingerprint::add_file(const std::string& key, const fs::path& path) {
  return add(key, sha256_file(path));
}

std::string Fingerprint::hex() const { return sha256_hex(text_.str()); }

bool up_to_date(const fs::path& manifest, const std::string& kind, const std::string& input_hash) {
  if (!fs::is_regular_file(manifest)) return false;
  try {
    const auto m = RunManifest::load(manifest);
    return m.kind == kind && m.config_hash == input_hash && !m.finished_at.empty();
  } catch (const std::exception&) {
    return false;
  }
}

void prepare_data(const PrepareDataOptions& o, const Context& ctx) {
  check_resolutions(o.render, "--render");
  if (o.dilation < 0) throw std::invalid_argument("--dilation must be >= 0");
  if (o.max_length < 3) throw std::invalid_argument("--max-length must be >= 3");
  if (!fs::is_directory(o.images)) throw InputError("image root not found: " + o.images.string());
  if (!o.vocab.empty()) require_file(o.vocab, "vocabulary");

  const ParseResult parsed = parse_file(o.annotations, o.strict);
  std::vector<std::string> problems;
  for (const auto& e : parsed.errors) problems.push_back("line " + std::to_string(e.line) + ": " + e.message);

  struct Kept {
    const LocalizedNarrative* narrative;
    std::uint64_t offset;
    fs::path image;
  };
  std::vector<Kept> kept;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < parsed.narratives.size(); ++i) {
    const auto& n = parsed.narratives[i];
    std::string problem;
    fs::path image;
    if (const auto v = validate_narrative(n); !v.empty()) {
      for (const auto& violation : v) problem += (problem.empty() ? "" : "; ") + violation.message;
    } else if (!seen.insert(n.image_id).second) {
      problem = "duplicate image_id";
    } else if (image = find_image(o.images, n); image.empty()) {
      problem = "image not found under " + o.images.string();
    }
    if (!problem.empty()) {
      const std::string msg = n.image_id + " (byte " + std::to_string(parsed.offsets[i]) + "): " + problem;
      if (o.strict) throw ValidationError(msg);
      problems.push_back(msg);
      continue;
    }
    kept.push_back({&n, parsed.offsets[i], image});
  }
  report_problems(ctx, "prepare-data", kept.size(), parsed.narratives.size() + parsed.errors.size(), problems);
  if (kept.empty()) throw ValidationError("no usable records in " + o.annotations.string());

  Fingerprint inputs;
  inputs.add("kind", "prepare-data").add_file("annotations", o.annotations);
  if (o.vocab.empty()) {
    inputs.add("vocab_size", std::to_string(o.vocab_size));
  } else {
    inputs.add_file("vocab", o.vocab);
  }
  inputs.add("render", join_ints(o.render))
      .add("dilation", std::to_string(o.dilation))
      .add("max_length", std::to_string(o.max_length))
      .add("strict", o.strict ? "1" : "0");
  for (const auto& k : kept) inputs.add(k.narrative->image_id + ":" + k.image.string(), sha256_file(k.image));
  const std::string input_hash = inputs.hex();

  const fs::path manifest_path = o.out / layout::kManifest;
  if (!o.force && up_to_date(manifest_path, "prepare-data", input_hash) && fs::exists(o.out / layout::kIndex) &&
      fs::exists(o.out / layout::kVocab) && (o.render.empty() || fs::exists(o.out / layout::kTargets))) {
    ctx.out << "prepare-data: " << o.out.string() << " is up to date (fingerprint "
            << RunManifest::load(manifest_path).dataset_fingerprint << ")\n";
    return;
  }

  RunManifest manifest = start_manifest("prepare-data", input_hash);
  Vocabulary vocab;
  if (o.vocab.empty()) {
    std::vector<std::string> captions;
    for (const auto& k : kept) captions.push_back(k.narrative->caption);
    ctx.progress("prepare-data: training a vocabulary of up to " + std::to_string(o.vocab_size) + " tokens");
    vocab = train_bpe(captions, o.vocab_size);
  } else {
    vocab = Vocabulary::load(o.vocab);
  }

  DatasetIndex index;
  index.annotations_path = fs::absolute(o.annotations).string();
  for (const auto& k : kept) index.entries.push_back({k.narrative->image_id, k.image.string(), k.offset});

  fs::create_directories(o.out);
  index.save(o.out / layout::kIndex);
  vocab.save(o.out / layout::kVocab);
  Fingerprint dataset;
  dataset.add("index", sha256_file(o.out / layout::kIndex)).add("vocab", sha256_file(o.out / layout::kVocab));

  if (!o.render.empty()) {
    TargetArchive archive;
    archive.max_length = static_cast<std::uint32_t>(o.max_length);
    archive.dilation = static_cast<std::uint32_t>(o.dilation);
    for (int r : o.render) archive.resolutions.push_back(static_cast<std::uint32_t>(r));
    EncodeOptions enc;
    enc.max_length = o.max_length;
    for (const auto& k : kept) {
      const auto& n = *k.narrative;
      const auto tok = encode(n.caption, vocab, n.timed_words, enc);
      auto& blocks = archive.entries[n.image_id];
      for (int r : o.render) blocks.push_back(render_attention(n, tok, r, o.dilation));
    }
    archive.save(o.out / layout::kTargets);
    dataset.add("targets", sha256_file(o.out / layout::kTargets));
  } else {
    fs::remove(o.out / layout::kTargets);
  }

  manifest.vocab_hash = sha256_hex(vocab.to_string());
  manifest.dataset_fingerprint = dataset.hex();
  finish_manifest(manifest, manifest_path);
  ctx.out << "prepare-data: " << kept.size() << " samples, " << vocab.size() << " tokens -> " << o.out.string()
          << " (fingerprint " << manifest.dataset_fingerprint << ")\n";
}

void tokenizer_train(const TokenizerTrainOptions& o, const Context& ctx) {
  const auto input_hash = Fingerprint()
                              .add("kind", "tokenizer-train")
                              .add_file("corpus", o.corpus)
                              .add("vocab_size", std::to_string(o.vocab_size))
                              .hex();
  if (!o.force && fs::exists(o.out) && up_to_date(sidecar(o.out), "tokenizer-train", input_hash)) {
    ctx.out << "tokenizer train: " << o.out.string() << " is up to date\n";
    return;
  }
  RunManifest manifest = start_manifest("tokenizer-train", input_hash);
  const auto corpus = read_corpus(o.corpus);
  const auto vocab = train_bpe(corpus, o.vocab_size);
  if (o.out.has_parent_path()) fs::create_directories(o.out.parent_path());
  vocab.save(o.out);
  manifest.vocab_hash = sha256_hex(vocab.to_string());
  finish_manifest(manifest, sidecar(o.out));
  ctx.out << "tokenizer train: " << vocab.size() << " tokens, " << vocab.merges().size() << " merges -> "
          << o.out.string() << '\n';
}

void tokenizer_encode(const TokenizerEncodeOptions& o, const Context& ctx) {
  require_file(o.vocab, "vocabulary");
  if (o.max_length < 3) throw std::invalid_argument("--max-length must be >= 3");
  const auto vocab = Vocabulary::load(o.vocab);
  EncodeOptions enc;
  enc.max_length = o.max_length;
  const auto tok = encode(o.text, vocab, {}, enc);
  json tokens = json::array();
  for (auto id : tok.ids) tokens.push_back(vocab.token_of(id));
  ctx.out << json{{"ids", tok.ids},
                  {"tokens", tokens},
                  {"word_alignment", tok.word_alignment},
                  {"valid_length", tok.valid_length}}
                 .dump()
          << '\n';
}

void render_oracle(const RenderOracleOptions& o, const Context& ctx) {
  if (o.resolutions.empty()) throw std::invalid_argument("--resolution: at least one value required");
  check_resolutions(o.resolutions, "--resolution");
  if (o.iou_threshold < 0.0 || o.iou_threshold > 1.0) throw std::invalid_argument("--iou-threshold must be in [0, 1]");
  if (o.iou_grid < 0 || o.dilation < 0) throw std::invalid_argument("--iou-grid and --dilation must be >= 0");
  require_file(o.annotations, "annotation file");
  require_file(o.masks, "mask file");
  require_file(o.categories, "category table");
  require_file(o.vocab, "vocabulary");

  std::ostringstream threshold;
  threshold.precision(17);
  threshold << o.iou_threshold;
  const auto input_hash = Fingerprint()
                              .add("kind", "render-oracle")
                              .add_file("annotations", o.annotations)
                              .add_file("masks", o.masks)
                              .add_file("categories", o.categories)
                              .add_file("vocab", o.vocab)
                              .add("resolutions", join_ints(o.resolutions))
                              .add("iou_threshold", threshold.str())
                              .add("iou_grid", std::to_string(o.iou_grid))
                              .add("dilation", std::to_string(o.dilation))
                              .add("max_length", std::to_string(o.max_length))
                              .hex();
  if (!o.force && fs::exists(o.out) && up_to_date(sidecar(o.out), "render-oracle", input_hash)) {
    ctx.out << "render-oracle: " << o.out.string() << " is up to date\n";
    return;
  }
  RunManifest manifest = start_manifest("render-oracle", input_hash);

  const auto parsed = parse_file(o.annotations, false);
  const auto masks = read_masks(o.masks);
  const auto categories = CategoryTable::load(o.categories);
  const auto vocab = Vocabulary::load(o.vocab);

  OracleOptions oracle;
  oracle.iou_threshold = o.iou_threshold;
  oracle.iou_grid = o.iou_grid;
  oracle.dilation = o.dilation;
  EncodeOptions enc;
  enc.max_length = o.max_length;

  TargetArchive archive;
  archive.max_length = static_cast<std::uint32_t>(o.max_length);
  archive.dilation = static_cast<std::uint32_t>(o.dilation);
  for (int r : o.resolutions) archive.resolutions.push_back(static_cast<std::uint32_t>(r));
  std::size_t without_masks = 0;
  for (const auto& n : parsed.narratives) {
    const auto tok = encode(n.caption, vocab, n.timed_words, enc);
    auto& blocks = archive.entries[n.image_id];
    const auto it = masks.find(n.image_id);
    if (it == masks.end()) ++without_masks;
    for (int r : o.resolutions) {
      blocks.push_back(it == masks.end() ? render_attention(n, tok, r, o.dilation)
                                         : oracle_attention(n, tok, it->second, categories, r, oracle));
    }
  }
  if (without_masks > 0) {
    ctx.err << "render-oracle: " << without_masks << " narratives have no mask record; their targets are trace renderings\n";
  }
  if (!parsed.errors.empty()) {
    ctx.err << "render-oracle: skipped " << parsed.errors.size() << " malformed annotation records\n";
  }
  if (o.out.has_parent_path()) fs::create_directories(o.out.parent_path());
  archive.save(o.out);
  manifest.vocab_hash = sha256_hex(vocab.to_string());
  manifest.dataset_fingerprint = sha256_file(o.out);
  finish_manifest(manifest, sidecar(o.out));
  ctx.out << "render-oracle: " << archive.entries.size() << " narratives at " << join_ints(o.resolutions) << " -> "
          << o.out.string() << '\n';
}

void synthesize(const SynthesizeOptions& o, const Context& ctx) {
  if (o.count < 1) throw std::invalid_argument("--count must be positive");
  if (o.size < 32) throw std::invalid_argument("--size must be >= 32");
  const auto input_hash = Fingerprint()
                              .add("kind", "synthesize")
                              .add("count", std::to_string(o.count))
                              .add("seed", std::to_string(o.seed))
                              .add("size", std::to_string(o.size))
                              .hex();
  const fs::path manifest_path = o.out / layout::kManifest;
  if (!o.force && up_to_date(manifest_path, "synthesize", input_hash) && fs::exists(o.out / "annotations.jsonl")) {
    ctx.out << "synthesize: " << o.out.string() << " is up to date\n";
    return;
  }
  RunManifest manifest = start_manifest("synthesize", input_hash);
  manifest.seed = o.seed;
  SyntheticOptions opts;
  opts.count = o.count;
  opts.seed = o.seed;
  opts.image_size = o.size;
  write_synthetic(o.out, make_quadrant_shapes(opts));
  manifest.dataset_fingerprint = sha256_file(o.out / "annotations.jsonl");
  finish_manifest(manifest, manifest_path);
  ctx.out << "synthesize: " << o.count << " samples -> " << o.out.string() << '\n';
}

}  // namespace loctex::cli
