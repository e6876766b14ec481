#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "stan/cli.hpp"
#include "stan/data/synth.hpp"
#include "stan/errors.hpp"
#include "stan/export.hpp"
#include "stan/model/checkpoint.hpp"
#include "stan/serialize.hpp"
#include "stan/train/report.hpp"

namespace stan {

namespace fs = std::filesystem;

namespace {

int exit_code(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::Usage: return kExitUsage;
    case ErrorCategory::MalformedManifest: return kExitMalformedManifest;
    case ErrorCategory::ShapeMismatch: return kExitShapeMismatch;
    case ErrorCategory::UnknownName: return kExitUnknownName;
    case ErrorCategory::Io: return kExitIo;
    case ErrorCategory::InvalidConfig: return kExitInvalidConfig;
  }
  return 1;
}

template <typename F>
auto as_name(F&& parse) -> decltype(parse()) {
  try {
    return parse();
  } catch (const std::invalid_argument& ex) {
    throw StanError(ErrorCategory::UnknownName, ex.what());
  }
}

template <typename F>
auto as_config(F&& parse) -> decltype(parse()) {
  try {
    return parse();
  } catch (const StanError&) {
    throw;
  } catch (const std::exception& ex) {
    throw StanError(ErrorCategory::InvalidConfig, ex.what());
  }
}

nlohmann::json read_json_file(const fs::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::exception& ex) {
    throw StanError(ErrorCategory::Io, ex.what());
  }
  return as_config([&] { return nlohmann::json::parse(text); });
}

LoadedDataset open_dataset(const fs::path& manifest) {
  if (!fs::is_regular_file(manifest)) throw StanError(ErrorCategory::Io, "manifest " + manifest.string() + " not found");
  return load_dataset(manifest);
}

LoadedCheckpoint<float> open_checkpoint(const fs::path& path) {
  try {
    return load_checkpoint<float>(path);
  } catch (const std::exception& ex) {
    throw StanError(ErrorCategory::Io, "checkpoint " + path.string() + ": " + ex.what());
  }
}

TrainConfig checkpoint_train_config(const LoadedCheckpoint<float>& ckpt) {
  return as_config([&] { return TrainConfig::from_json(ckpt.metadata.at("train_config")); });
}

void check_model_fits(const VideoClassifier<float>& model, const LoadedDataset& data) {
  const auto shape = model.input_shape();
  const auto& m = data.manifest;
  if (shape[2] != m.height || shape[3] != m.width || shape[1] > data.frames() ||
      model.num_classes() != m.num_classes) {
    throw StanError(ErrorCategory::ShapeMismatch,
                    "model expects " + to_string(shape) + " with " + std::to_string(model.num_classes()) +
                        " classes; manifest has clips of " + std::to_string(data.frames()) + "x" +
                        std::to_string(m.height) + "x" + std::to_string(m.width) + " with " +
                        std::to_string(m.num_classes) + " classes");
  }
}

void ensure_writable_dir(const fs::path& dir) {
  if (fs::exists(dir) && !fs::is_directory(dir)) {
    throw StanError(ErrorCategory::Io, dir.string() + " exists and is not a directory");
  }
}

// ---- gen-data ---------------------------------------------------------------

struct GenDataArgs {
  std::string config, out;
  std::optional<std::uint64_t> seed;
};

int cmd_gen_data(const GenDataArgs& a, std::ostream& out) {
  SynthConfig cfg;
  if (!a.config.empty()) cfg = as_config([&] { return SynthConfig::from_json(read_json_file(a.config)); });
  if (a.seed) cfg.seed = *a.seed;
  as_config([&] { cfg.validate(); return 0; });
  ensure_writable_dir(a.out);
  const auto m = generate(cfg, a.out);
  out << "wrote " << m.clips.size() << " clips to " << (fs::path(a.out) / "manifest.json").string() << "\n";
  return kExitOk;
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
  std::string manifest, model, view, train_config, out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> frames, epochs;
  std::optional<std::size_t> folds, fold;
  std::uint64_t split_seed = 0;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  TrainConfig tc;
  if (!a.train_config.empty()) tc = as_config([&] { return TrainConfig::from_json(read_json_file(a.train_config)); });
  if (!a.model.empty()) tc.model = as_name([&] { return parse_model_kind(a.model); });
  if (!a.view.empty()) tc.view = as_name([&] { return parse_view(a.view); });
  if (a.seed) tc.seed = *a.seed;
  if (a.epochs) {
    tc.epochs = *a.epochs;
    tc.warmup_epochs = std::min(tc.warmup_epochs, tc.epochs);
  }
  if (a.folds.has_value() != a.fold.has_value()) {
    throw StanError(ErrorCategory::Usage, "--folds and --fold must be given together");
  }
  auto data = open_dataset(a.manifest);
  const std::size_t clip_frames = data.frames();
  if (a.frames) tc.input_frames = *a.frames == 0 ? clip_frames : *a.frames;
  as_config([&] { tc.validate(); return 0; });
  if (tc.input_frames > clip_frames) {
    throw StanError(ErrorCategory::ShapeMismatch, "model input of " + std::to_string(tc.input_frames) +
                                                      " frames exceeds clip length " + std::to_string(clip_frames));
  }
  std::vector<std::size_t> train_idx(data.manifest.clips.size());
  for (std::size_t i = 0; i < train_idx.size(); ++i) train_idx[i] = i;
  nlohmann::json split = nullptr;
  if (a.folds) {
    if (*a.fold >= *a.folds) throw StanError(ErrorCategory::Usage, "--fold must be < --folds");
    const auto plan = as_config([&] { return kfold(data.manifest, *a.folds, a.split_seed); });
    train_idx = plan.train_indices(*a.fold);
    split = {{"kind", "kfold"}, {"folds", *a.folds}, {"fold", *a.fold}, {"seed", a.split_seed}};
  }
  const fs::path out_path(a.out);
  if (fs::is_directory(out_path)) throw StanError(ErrorCategory::Io, a.out + " is a directory");

  auto model = build_model(tc, data.manifest.num_classes, data.manifest.height, data.manifest.width, tc.seed);
  std::vector<TrainingExample> examples;
  for (auto i : train_idx) {
    auto p = prepare_input(data.clips[i], data.manifest.clips[i], tc.view, tc.view_params, tc.input_frames);
    examples.push_back({p.input, data.manifest.clips[i].label});
  }
  std::ostringstream log;
  log << "epoch,loss,accuracy,lr\n";
  train_model(*model, tc, examples, [&](const EpochLog& e) {
    char line[160];
    std::snprintf(line, sizeof line, "%zu,%.17g,%.17g,%.17g\n", e.epoch + 1, e.loss, e.accuracy, e.lr);
    log << line;
    out << "epoch " << e.epoch + 1 << "/" << tc.epochs << " loss " << e.loss << " accuracy " << e.accuracy << "\n";
  });
  nlohmann::json meta{{"train_config", tc.to_json()},
                      {"dataset_id", data.manifest.dataset_id},
                      {"clip_frames", clip_frames},
                      {"split", split},
                      {"train_clips", train_idx.size()}};
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  save_checkpoint(out_path, *model, meta);
  write_file_atomic(out_path.string() + ".log.csv", log.str());
  out << "wrote " << out_path.string() << "\n";
  return kExitOk;
}

// ---- explain ----------------------------------------------------------------

struct ExplainArgs {
  std::string checkpoint, manifest, method, clip, out;
  std::optional<std::size_t> target_class;
  std::size_t samples = 25;
  double sigma = 0.15;
  std::uint64_t seed = 0;
  std::optional<double> threshold;
  std::string target = "logit";
};

int cmd_explain(const ExplainArgs& a, std::ostream& out) {
  const auto method = as_name([&] { return parse_method(a.method); });
  if (a.target != "logit" && a.target != "loss") {
    throw StanError(ErrorCategory::UnknownName, "unknown gradient target '" + a.target + "' (expected logit|loss)");
  }
  const auto target = a.target == "logit" ? GradientTarget::Logit : GradientTarget::Loss;
  if (method == SaliencyMethod::SmoothGrad && (a.samples == 0 || !(a.sigma >= 0.0))) {
    throw StanError(ErrorCategory::InvalidConfig, "smoothgrad needs --samples >= 1 and --sigma >= 0");
  }
  if (a.threshold && !(*a.threshold >= 0.0 && *a.threshold <= 1.0)) {
    throw StanError(ErrorCategory::InvalidConfig, "--threshold must be in [0,1]");
  }
  auto ckpt = open_checkpoint(a.checkpoint);
  const auto tc = checkpoint_train_config(ckpt);
  auto data = open_dataset(a.manifest);
  const std::size_t index = data.manifest.index_of(a.clip);
  auto& model = *ckpt.model;
  check_model_fits(model, data);
  if (a.target_class && *a.target_class >= model.num_classes()) {
    throw StanError(ErrorCategory::Usage, "--class must be < " + std::to_string(model.num_classes()));
  }
  ensure_writable_dir(a.out);

  const auto& entry = data.manifest.clips[index];
  const std::size_t frames = model.input_shape()[1];
  auto prepared = prepare_input(data.clips[index], entry, tc.view, tc.view_params, frames);
  const std::size_t predicted = predict(model, prepared.input);
  const std::size_t cls = a.target_class.value_or(predicted);
  SaliencyVolume<float> volume;
  switch (method) {
    case SaliencyMethod::Vanilla: volume = vanilla_grad(model, prepared.input, cls, target); break;
    case SaliencyMethod::SmoothGrad:
      volume = smoothgrad(model, prepared.input, cls, a.samples, a.sigma, a.seed, target);
      break;
    case SaliencyMethod::GradCam: volume = gradcam(model, prepared.input, cls, target); break;
  }
  auto series = frame_scores(volume);
  ExplanationRecord record;
  record.clip_id = entry.id;
  record.method = method;
  record.target_class = cls;
  record.predicted_class = predicted;
  record.threshold = a.threshold;
  record.source_length = entry.frames;
  if (frames < entry.frames) {
    record.sampled_indices = prepared.sampled_indices;
    series.sampled_indices = prepared.sampled_indices;
    record.extra["extended_scores"] = extend_to_long(series, entry.frames).scores;
  }
  record.extra["view"] = to_string(tc.view);
  record.extra["label"] = entry.label;
  if (method == SaliencyMethod::SmoothGrad) {
    record.extra["samples"] = a.samples;
    record.extra["sigma"] = a.sigma;
    record.extra["seed"] = a.seed;
  }
  write_explanation(a.out, prepared.input, volume, series, record);
  out << "explained " << entry.id << " (class " << cls << ", predicted " << predicted << ") into " << a.out << "\n";
  return kExitOk;
}

// ---- eval -------------------------------------------------------------------

struct EvalArgs {
  std::vector<std::string> checkpoints;
  std::string grid, manifest, out;
  std::vector<std::string> methods{"vanilla", "smoothgrad", "gradcam"};
  std::vector<std::string> lengths{"short"};
  std::optional<std::size_t> samples;
  std::optional<double> sigma;
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 1;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  if (a.checkpoints.empty() == a.grid.empty()) {
    throw StanError(ErrorCategory::Usage, "give either --checkpoint (one or more) or --grid");
  }
  if (a.jobs == 0) throw StanError(ErrorCategory::Usage, "--jobs must be >= 1");
  GridConfig options;
  if (!a.grid.empty()) options = as_config([&] { return GridConfig::from_json(read_json_file(a.grid)); });
  if (a.checkpoints.size()) {
    options.methods.clear();
    for (const auto& m : a.methods) options.methods.push_back(as_name([&] { return parse_method(m); }));
    options.lengths.clear();
    for (const auto& l : a.lengths) options.lengths.push_back(as_name([&] { return parse_length(l); }));
  }
  if (a.samples) options.smooth_samples = *a.samples;
  if (a.sigma) options.smooth_sigma = *a.sigma;
  if (a.seed) {
    options.train.seed = *a.seed;
    options.explain_seed = *a.seed;
  }
  options.jobs = a.jobs;
  as_config([&] { options.validate(); return 0; });
  auto data = open_dataset(a.manifest);
  auto progress = [&](const std::string& msg) { out << msg << "\n" << std::flush; };

  MetricsReport report;
  if (!a.grid.empty()) {
    if (options.short_frames > data.frames()) {
      throw StanError(ErrorCategory::ShapeMismatch, "short_frames exceeds clip length " + std::to_string(data.frames()));
    }
    ensure_writable_dir(a.out);
    report = run_experiment_grid(data, options, progress);
  } else {
    std::vector<LoadedCheckpoint<float>> ckpts;
    std::vector<TrainedModel> models;
    for (const auto& path : a.checkpoints) ckpts.push_back(open_checkpoint(path));
    for (auto& c : ckpts) {
      check_model_fits(*c.model, data);
      const auto tc = checkpoint_train_config(c);
      models.push_back({c.model.get(), tc.view, tc.view_params});
    }
    // Held-out fold of the first checkpoint when it was trained on a split of
    // this dataset; otherwise every clip serves both roles.
    std::vector<std::size_t> all(data.manifest.clips.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    std::vector<std::size_t> calibration = all, test = all;
    const auto& meta = ckpts.front().metadata;
    if (meta.value("dataset_id", "") == data.manifest.dataset_id && meta.contains("split") &&
        meta["split"].is_object()) {
      const auto& s = meta["split"];
      const auto plan = as_config([&] {
        return kfold(data.manifest, s.at("folds").get<std::size_t>(), s.at("seed").get<std::uint64_t>());
      });
      calibration = plan.train_indices(s.at("fold").get<std::size_t>());
      test = plan.test_indices(s.at("fold").get<std::size_t>());
    }
    ensure_writable_dir(a.out);
    report = evaluate_models(data, models, calibration, test, options, progress);
  }
  write_report(a.out, report);
  out << "wrote report to " << a.out << "\n";
  return kExitOk;
}

// ---- report -----------------------------------------------------------------

int cmd_report(const std::string& runs, const std::string& out_path, std::ostream& out) {
  const auto text = consolidate_reports(runs);
  const fs::path p(out_path);
  if (fs::is_directory(p)) throw StanError(ErrorCategory::Io, out_path + " is a directory");
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  write_file_atomic(p, text);
  out << "wrote " << out_path << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Spatiotemporal attention video classifier with gradient explanations"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic planted-signal dataset");
  gen_cmd->add_option("--config", gen.config, "JSON generator config (defaults when omitted)");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--seed", gen.seed, "Generator seed (overrides the config)");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a classifier and write a checkpoint");
  train_cmd->add_option("--manifest", tr.manifest, "Dataset manifest")->required();
  train_cmd->add_option("--model", tr.model, "stan | cnn");
  train_cmd->add_option("--view", tr.view, "global | local | global-local");
  train_cmd->add_option("--train-config", tr.train_config, "JSON training config");
  train_cmd->add_option("--out", tr.out, "Checkpoint path")->required();
  train_cmd->add_option("--seed", tr.seed, "Initialization and shuffling seed");
  train_cmd->add_option("--frames", tr.frames, "Frames the model consumes (0 = full clip)");
  train_cmd->add_option("--epochs", tr.epochs, "Override the epoch count");
  train_cmd->add_option("--folds", tr.folds, "Hold out one fold of a stratified k-fold split");
  train_cmd->add_option("--fold", tr.fold, "Index of the held-out fold");
  train_cmd->add_option("--split-seed", tr.split_seed, "Seed of the k-fold split");

  ExplainArgs ex;
  auto* explain_cmd = app.add_subcommand("explain", "Explain one clip with a gradient method");
  explain_cmd->add_option("--checkpoint", ex.checkpoint, "Checkpoint path")->required();
  explain_cmd->add_option("--manifest", ex.manifest, "Dataset manifest")->required();
  explain_cmd->add_option("--method", ex.method, "vanilla | smoothgrad | gradcam")->required();
  explain_cmd->add_option("--clip", ex.clip, "Clip id")->required();
  explain_cmd->add_option("--out", ex.out, "Output directory")->required();
  explain_cmd->add_option("--class", ex.target_class, "Target class (default: predicted)");
  explain_cmd->add_option("--samples", ex.samples, "SmoothGrad sample count");
  explain_cmd->add_option("--sigma", ex.sigma, "SmoothGrad noise, fraction of the clip's value range");
  explain_cmd->add_option("--seed", ex.seed, "SmoothGrad noise seed");
  explain_cmd->add_option("--threshold", ex.threshold, "Importance threshold recorded in the sidecar");
  explain_cmd->add_option("--target", ex.target, "logit | loss");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate checkpoints or run an experiment grid");
  eval_cmd->add_option("--checkpoint", ev.checkpoints, "Checkpoint path (repeatable)");
  eval_cmd->add_option("--grid", ev.grid, "JSON experiment grid config");
  eval_cmd->add_option("--manifest", ev.manifest, "Dataset manifest")->required();
  eval_cmd->add_option("--out", ev.out, "Report directory")->required();
  eval_cmd->add_option("--methods", ev.methods, "Methods for checkpoint evaluation")->delimiter(',');
  eval_cmd->add_option("--lengths", ev.lengths, "short and/or long")->delimiter(',');
  eval_cmd->add_option("--smooth-samples", ev.samples, "SmoothGrad sample count");
  eval_cmd->add_option("--smooth-sigma", ev.sigma, "SmoothGrad noise level");
  eval_cmd->add_option("--seed", ev.seed, "Training and explanation seed");
  eval_cmd->add_option("--jobs", ev.jobs, "Parallel jobs");

  std::string runs, report_out;
  auto* report_cmd = app.add_subcommand("report", "Consolidate report directories into one set of tables");
  report_cmd->add_option("--runs", runs, "Directory holding eval outputs")->required();
  report_cmd->add_option("--out", report_out, "Output text file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: usage: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (gen_cmd->parsed()) return cmd_gen_data(gen, out);
    if (train_cmd->parsed()) return cmd_train(tr, out);
    if (explain_cmd->parsed()) return cmd_explain(ex, out);
    if (eval_cmd->parsed()) return cmd_eval(ev, out);
    if (report_cmd->parsed()) return cmd_report(runs, report_out, out);
  } catch (const StanError& e) {
    err << "error: " << to_string(e.category()) << ": " << e.what() << "\n";
    return exit_code(e.category());
  } catch (const fs::filesystem_error& e) {
    err << "error: io: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::invalid_argument& e) {
    err << "error: invalid-config: " << e.what() << "\n";
    return kExitInvalidConfig;
  } catch (const std::exception& e) {
    err << "error: io: " << e.what() << "\n";
    return kExitIo;
  }
  err << "error: usage: no command\n";
  return kExitUsage;
}

}  // namespace stan
