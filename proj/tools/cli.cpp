#include "cli.hpp"

#include <cstdlib>
#include <functional>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "commands.hpp"
#include "loctex/annotations.hpp"
#include "loctex/checkpoint.hpp"
#include "loctex/manifest.hpp"
#include "loctex/training.hpp"

namespace loctex::cli {

namespace {

bool verbose_from_env() {
  const char* v = std::getenv("LOCTEX_VERBOSE");
  return v != nullptr && *v != '\0' && std::string(v) != "0";
}

std::string error_kind(const std::exception_ptr& ep) {
  try {
    std::rethrow_exception(ep);
  } catch (const CheckpointError&) {
    return "checkpoint";
  } catch (const NonFiniteLossError&) {
    return "nonfinite_loss";
  } catch (const ParseError&) {
    return "parse";
  } catch (const ValidationError&) {
    return "validation";
  } catch (const ConflictError&) {
    return "conflict";
  } catch (const InputError&) {
    return "input";
  } catch (const std::filesystem::filesystem_error&) {
    return "io";
  } catch (const std::invalid_argument&) {
    return "invalid_argument";
  } catch (...) {
    return "runtime";
  }
}

std::string error_message(const std::exception_ptr& ep) {
  try {
    std::rethrow_exception(ep);
  } catch (const ParseError& e) {
    return "line " + std::to_string(e.line()) + ": " + e.what();
  } catch (const std::exception& e) {
    return e.what();
  } catch (...) {
    return "unknown error";
  }
}

const CLI::App* deepest_parsed(const CLI::App& app) {
  const CLI::App* cur = &app;
  while (true) {
    const auto subs = cur->get_subcommands();
    if (subs.empty()) return cur;
    cur = subs.front();
  }
}

}  // namespace

int run_subcommand(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Localized-narrative pre-training: data preparation, training, probing and visualization", "loctex"};
  app.set_version_flag("--version", code_version());
  app.require_subcommand(1);

  // name of the parsed subcommand -> action
  std::vector<std::pair<CLI::App*, std::function<void(const Context&)>>> actions;
  auto add_force = [](CLI::App* sub, bool& flag) { sub->add_flag("--force", flag, "Recompute even when outputs are up to date"); };

  PrepareDataOptions prep;
  auto* prep_cmd = app.add_subcommand("prepare-data", "Validate annotations, build the vocabulary and dataset index");
  prep_cmd->add_option("--annotations", prep.annotations, "Annotation file (JSON lines)")->required();
  prep_cmd->add_option("--images", prep.images, "Image root directory")->required();
  prep_cmd->add_option("--out", prep.out, "Output dataset directory")->required();
  auto* vocab_opt = prep_cmd->add_option("--vocab", prep.vocab, "Existing vocabulary (skips BPE training)");
  prep_cmd->add_option("--vocab-size", prep.vocab_size, "BPE vocabulary budget")->excludes(vocab_opt);
  prep_cmd->add_option("--render", prep.render, "Pre-render targets at these resolutions, e.g. 7,14")->delimiter(',');
  prep_cmd->add_option("--dilation", prep.dilation, "Trace dilation in cells");
  prep_cmd->add_option("--max-length", prep.max_length, "Caption length including [SOS]/[EOS]");
  prep_cmd->add_flag("--strict", prep.strict, "Abort on the first invalid record");
  add_force(prep_cmd, prep.force);
  actions.emplace_back(prep_cmd, [&](const Context& c) { prepare_data(prep, c); });

  auto* tok_cmd = app.add_subcommand("tokenizer", "Train or apply the BPE tokenizer");
  tok_cmd->require_subcommand(1);
  TokenizerTrainOptions tok_train;
  auto* tok_train_cmd = tok_cmd->add_subcommand("train", "Learn a vocabulary from captions");
  tok_train_cmd->add_option("--corpus", tok_train.corpus, "Annotations (*.jsonl) or one caption per line")->required();
  tok_train_cmd->add_option("--out", tok_train.out, "Vocabulary file")->required();
  tok_train_cmd->add_option("--vocab-size", tok_train.vocab_size, "Vocabulary budget including specials");
  add_force(tok_train_cmd, tok_train.force);
  actions.emplace_back(tok_train_cmd, [&](const Context& c) { tokenizer_train(tok_train, c); });
  TokenizerEncodeOptions tok_encode;
  auto* tok_encode_cmd = tok_cmd->add_subcommand("encode", "Print token ids of a caption as JSON");
  tok_encode_cmd->add_option("--vocab", tok_encode.vocab, "Vocabulary file")->required();
  tok_encode_cmd->add_option("--text", tok_encode.text, "Caption")->required();
  tok_encode_cmd->add_option("--max-length", tok_encode.max_length, "Sequence length including [SOS]/[EOS]");
  actions.emplace_back(tok_encode_cmd, [&](const Context& c) { tokenizer_encode(tok_encode, c); });

  TrainOptions train_opts;
  auto* train_cmd = app.add_subcommand("train", "Pre-train the visual and textual backbones");
  train_cmd->add_option("--config", train_opts.config, "Run configuration (INI)")->required();
  train_cmd->add_option("--data", train_opts.data, "Prepared dataset directory (overrides data.dataset)");
  train_cmd->add_option("--out", train_opts.out, "Run directory (overrides run.output_dir)");
  train_cmd->add_option("--resume", train_opts.resume, "Checkpoint to continue from");
  train_cmd->add_option("--seed", train_opts.seed, "Overrides run.seed");
  add_force(train_cmd, train_opts.force);
  actions.emplace_back(train_cmd, [&](const Context& c) { train(train_opts, c); });

  ProbeOptions probe_opts;
  auto* probe_cmd = app.add_subcommand("probe", "Linear SVM probe on frozen global features");
  probe_cmd->add_option("--checkpoint", probe_opts.checkpoint, "Trained checkpoint")->required();
  probe_cmd->add_option("--train", probe_opts.train, "Training labels (TSV: image, then one 0/1 column per class)")
      ->required();
  probe_cmd->add_option("--test", probe_opts.test, "Test labels, same layout")->required();
  probe_cmd->add_option("--out", probe_opts.out, "Report (JSON)")->required();
  probe_cmd->add_option("--costs", probe_opts.costs, "SVM cost grid")->delimiter(',');
  probe_cmd->add_option("--folds", probe_opts.folds, "Cross-validation folds");
  probe_cmd->add_option("--seed", probe_opts.seed, "Fold assignment seed");
  probe_cmd->add_option("--batch-size", probe_opts.batch_size, "Feature extraction batch size");
  add_force(probe_cmd, probe_opts.force);
  actions.emplace_back(probe_cmd, [&](const Context& c) { probe(probe_opts, c); });

  VisualizeOptions vis;
  auto* vis_cmd = app.add_subcommand("visualize", "Overlay per-token attention on an image");
  vis_cmd->add_option("--checkpoint", vis.checkpoint, "Trained checkpoint")->required();
  vis_cmd->add_option("--image", vis.image, "Input image")->required();
  vis_cmd->add_option("--caption", vis.caption, "Caption to attend with")->required();
  vis_cmd->add_option("--out", vis.out, "Output directory")->required();
  vis_cmd->add_option("--words", vis.words, "Only these words, comma separated")->delimiter(',');
  vis_cmd->add_option("--alpha", vis.alpha, "Heatmap opacity")->check(CLI::Range(0.0, 1.0));
  vis_cmd->add_option("--colormap", vis.colormap, "Heatmap colormap")->check(CLI::IsMember(colormap_names()));
  vis_cmd->add_option("--scale", vis.scale, "Attention map scale (1 = final feature map)");
  add_force(vis_cmd, vis.force);
  actions.emplace_back(vis_cmd, [&](const Context& c) { visualize(vis, c); });

  RenderOracleOptions oracle;
  auto* oracle_cmd = app.add_subcommand("render-oracle", "Render targets from instance masks matched to traces");
  oracle_cmd->add_option("--annotations", oracle.annotations, "Annotation file (JSON lines)")->required();
  oracle_cmd->add_option("--masks", oracle.masks, "Instance masks (JSON lines, row-major RLE)")->required();
  oracle_cmd->add_option("--categories", oracle.categories, "Category table (TSV: category, alias)")->required();
  oracle_cmd->add_option("--vocab", oracle.vocab, "Vocabulary file")->required();
  oracle_cmd->add_option("--out", oracle.out, "Target archive")->required();
  oracle_cmd->add_option("--resolution", oracle.resolutions, "Target resolutions, e.g. 7,14")
      ->delimiter(',')
      ->required();
  oracle_cmd->add_option("--iou-threshold", oracle.iou_threshold, "Minimum trace/instance IoU");
  oracle_cmd->add_option("--iou-grid", oracle.iou_grid, "Comparison grid (0: mask resolution)");
  oracle_cmd->add_option("--dilation", oracle.dilation, "Trace dilation in cells");
  oracle_cmd->add_option("--max-length", oracle.max_length, "Caption length including [SOS]/[EOS]");
  add_force(oracle_cmd, oracle.force);
  actions.emplace_back(oracle_cmd, [&](const Context& c) { render_oracle(oracle, c); });

  SynthesizeOptions synth;
  auto* synth_cmd = app.add_subcommand("synthesize", "Write the colored-shapes toy dataset");
  synth_cmd->add_option("--out", synth.out, "Output directory")->required();
  synth_cmd->add_option("--count", synth.count, "Number of samples");
  synth_cmd->add_option("--seed", synth.seed, "Generator seed");
  synth_cmd->add_option("--size", synth.size, "Image side in pixels");
  add_force(synth_cmd, synth.force);
  actions.emplace_back(synth_cmd, [&](const Context& c) { synthesize(synth, c); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << deepest_parsed(app)->help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << code_version() << '\n';
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << deepest_parsed(app)->help();
    return 2;
  }

  const Context ctx{out, err, verbose_from_env()};
  for (auto& [cmd, action] : actions) {
    if (!cmd->parsed()) continue;
    std::string name = cmd->get_name();
    if (cmd->get_parent() != &app) name = cmd->get_parent()->get_name() + " " + name;
    try {
      action(ctx);
      return 0;
    } catch (...) {
      const auto ep = std::current_exception();
      const std::string message = error_message(ep);
      err << "loctex " << name << ": " << message << '\n';
      err << nlohmann::json{{"status", "error"}, {"subcommand", name}, {"kind", error_kind(ep)}, {"message", message}}
                 .dump()
          << '\n';
      return 1;
    }
  }
  return 2;
}

}  // namespace loctex::cli
