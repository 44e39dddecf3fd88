#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "loctex/probe.hpp"
#include "loctex/tokenizer.hpp"

namespace loctex::cli {

namespace fs = std::filesystem;

/// Bad or missing input files.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Records rejected in strict mode, or nothing usable left.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The output location already holds a different run.
class ConflictError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Context {
  std::ostream& out;
  std::ostream& err;
  bool verbose = false;

  void progress(const std::string& line) const {
    if (verbose) err << line << '\n' << std::flush;
  }
};

/// Accumulates `key=value` lines and hashes them; the input fingerprint a
/// command compares against its previous manifest.
class Fingerprint {
 public:
  Fingerprint& add(const std::string& key, const std::string& value);
  Fingerprint& add_file(const std::string& key, const fs::path& path);
  std::string hex() const;

 private:
  std::ostringstream text_;
};

/// True when `manifest` exists and records a run of `kind` whose
/// config_hash equals `input_hash`.
bool up_to_date(const fs::path& manifest, const std::string& kind, const std::string& input_hash);

struct PrepareDataOptions {
  fs::path annotations;
  fs::path images;
  fs::path out;
  fs::path vocab;  // empty: train one on the kept captions
  std::size_t vocab_size = 10000;
  std::vector<int> render;
  int dilation = 0;
  std::size_t max_length = kDefaultMaxLength;
  bool strict = false;
  bool force = false;
};
void prepare_data(const PrepareDataOptions& o, const Context& ctx);

struct TokenizerTrainOptions {
  fs::path corpus;  // *.jsonl: annotation records; otherwise one caption per line
  fs::path out;
  std::size_t vocab_size = 10000;
  bool force = false;
};
void tokenizer_train(const TokenizerTrainOptions& o, const Context& ctx);

struct TokenizerEncodeOptions {
  fs::path vocab;
  std::string text;
  std::size_t max_length = kDefaultMaxLength;
};
void tokenizer_encode(const TokenizerEncodeOptions& o, const Context& ctx);

struct TrainOptions {
  fs::path config;
  fs::path data;
  fs::path out;
  fs::path resume;
  std::optional<std::uint64_t> seed;
  bool force = false;
};
void train(const TrainOptions& o, const Context& ctx);

struct ProbeOptions {
  fs::path checkpoint;
  fs::path train;
  fs::path test;
  fs::path out;
  std::vector<double> costs = kDefaultProbeCosts;
  int folds = 3;
  std::uint64_t seed = 0;
  int batch_size = 32;
  bool force = false;
};
void probe(const ProbeOptions& o, const Context& ctx);

struct VisualizeOptions {
  fs::path checkpoint;
  fs::path image;
  std::string caption;
  fs::path out;
  std::vector<std::string> words;
  double alpha = 0.5;
  std::string colormap = "jet";
  int scale = 2;
  bool force = false;
};
void visualize(const VisualizeOptions& o, const Context& ctx);

struct RenderOracleOptions {
  fs::path annotations;
  fs::path masks;
  fs::path categories;
  fs::path vocab;
  fs::path out;
  std::vector<int> resolutions;
  double iou_threshold = 0.2;
  int iou_grid = 0;
  int dilation = 0;
  std::size_t max_length = kDefaultMaxLength;
  bool force = false;
};
void render_oracle(const RenderOracleOptions& o, const Context& ctx);

struct SynthesizeOptions {
  fs::path out;
  std::size_t count = 32;
  std::uint64_t seed = 0;
  int size = 64;
  bool force = false;
};
void synthesize(const SynthesizeOptions& o, const Context& ctx);

/// Colormap names accepted by visualize.
std::vector<std::string> colormap_names();

}  // namespace loctex::cli
