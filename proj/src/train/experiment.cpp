#include "stan/train/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <map>
#include <mutex>
#include <set>
#include <stdexcept>
#include <thread>

#include "stan/data/clip_io.hpp"
#include "stan/data/synth.hpp"
#include "stan/errors.hpp"

namespace stan {

std::string to_string(SequenceLength length) { return length == SequenceLength::Short ? "short" : "long"; }

SequenceLength parse_length(const std::string& name) {
  if (name == "short") return SequenceLength::Short;
  if (name == "long") return SequenceLength::Long;
  throw std::invalid_argument("unknown length '" + name + "' (expected short|long)");
}

std::string CellKey::id() const {
  return to_string(model) + "-" + to_string(view) + "-" + to_string(method) + "-" + to_string(length);
}

// ---- configuration ----------------------------------------------------------

void GridConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("GridConfig: " + what); };
  if (models.empty() || views.empty() || methods.empty() || lengths.empty()) {
    fail("models, views, methods and lengths must be non-empty");
  }
  if (split == SplitKind::KFold && folds < 2) fail("folds must be >= 2");
  if (short_frames == 0) fail("short_frames must be positive");
  if (smooth_samples == 0) fail("smooth_samples must be >= 1");
  if (!(smooth_sigma >= 0.0)) fail("smooth_sigma must be >= 0");
  if (!(threshold_step > 0.0 && threshold_step <= 1.0)) fail("threshold_step must be in (0,1]");
  if (jobs == 0) fail("jobs must be >= 1");
  TrainConfig t = train;
  t.input_frames = short_frames;
  t.validate();
}

nlohmann::json GridConfig::to_json() const {
  nlohmann::json j;
  for (auto m : models) j["models"].push_back(to_string(m));
  for (auto v : views) j["views"].push_back(to_string(v));
  for (auto m : methods) j["methods"].push_back(to_string(m));
  for (auto l : lengths) j["lengths"].push_back(to_string(l));
  j["split"] = to_string(split);
  j["folds"] = folds;
  j["split_seed"] = split_seed;
  auto tj = train.to_json();
  for (const char* key : {"model", "view", "input_frames"}) tj.erase(key);
  j["train"] = tj;
  j["short_frames"] = short_frames;
  j["smooth_samples"] = smooth_samples;
  j["smooth_sigma"] = smooth_sigma;
  j["explain_seed"] = explain_seed;
  j["target"] = target == GradientTarget::Logit ? "logit" : "loss";
  j["threshold_step"] = threshold_step;
  return j;
}

GridConfig GridConfig::from_json(const nlohmann::json& j) {
  GridConfig g;
  for (const auto& [key, value] : j.items()) {
    if (key == "models") {
      g.models.clear();
      for (const auto& v : value) g.models.push_back(parse_model_kind(v.get<std::string>()));
    } else if (key == "views") {
      g.views.clear();
      for (const auto& v : value) g.views.push_back(parse_view(v.get<std::string>()));
    } else if (key == "methods") {
      g.methods.clear();
      for (const auto& v : value) g.methods.push_back(parse_method(v.get<std::string>()));
    } else if (key == "lengths") {
      g.lengths.clear();
      for (const auto& v : value) g.lengths.push_back(parse_length(v.get<std::string>()));
    } else if (key == "split") {
      g.split = parse_split_kind(value.get<std::string>());
    } else if (key == "folds") {
      g.folds = value.get<std::size_t>();
    } else if (key == "split_seed") {
      g.split_seed = value.get<std::uint64_t>();
    } else if (key == "train") {
      g.train = TrainConfig::from_json(value);
    } else if (key == "short_frames") {
      g.short_frames = value.get<std::size_t>();
    } else if (key == "smooth_samples") {
      g.smooth_samples = value.get<std::size_t>();
    } else if (key == "smooth_sigma") {
      g.smooth_sigma = value.get<double>();
    } else if (key == "explain_seed") {
      g.explain_seed = value.get<std::uint64_t>();
    } else if (key == "target") {
      const auto t = value.get<std::string>();
      if (t == "logit") g.target = GradientTarget::Logit;
      else if (t == "loss") g.target = GradientTarget::Loss;
      else throw std::invalid_argument("unknown gradient target '" + t + "' (expected logit|loss)");
    } else if (key == "threshold_step") {
      g.threshold_step = value.get<double>();
    } else if (key == "jobs") {
      g.jobs = value.get<std::size_t>();
    } else {
      throw std::invalid_argument("GridConfig: unknown key '" + key + "'");
    }
  }
  return g;
}

// ---- serialization of results ------------------------------------------------

nlohmann::json CellResult::summary_json() const {
  return {{"id", key.id()},
          {"model", to_string(key.model)},
          {"view", to_string(key.view)},
          {"method", to_string(key.method)},
          {"length", to_string(key.length)},
          {"thresholds", thresholds},
          {"calibration_f1", calibration_f1},
          {"video_f1_per_class", video.per_class},
          {"video_f1", video.micro},
          {"video_f1_macro", video.macro},
          {"frame_f1_per_class", frame_f1_per_class},
          {"frame_f1", frame_f1},
          {"always_positive_f1", always_positive_f1},
          {"frames_evaluated", frames_evaluated}};
}

CellResult CellResult::from_summary_json(const nlohmann::json& j) {
  CellResult c;
  c.key.model = parse_model_kind(j.at("model").get<std::string>());
  c.key.view = parse_view(j.at("view").get<std::string>());
  c.key.method = parse_method(j.at("method").get<std::string>());
  c.key.length = parse_length(j.at("length").get<std::string>());
  c.thresholds = j.at("thresholds").get<std::vector<double>>();
  c.calibration_f1 = j.at("calibration_f1").get<std::vector<double>>();
  c.video.per_class = j.at("video_f1_per_class").get<std::vector<double>>();
  c.video.micro = j.at("video_f1").get<double>();
  c.video.macro = j.at("video_f1_macro").get<double>();
  c.frame_f1_per_class = j.at("frame_f1_per_class").get<std::vector<double>>();
  c.frame_f1 = j.at("frame_f1").get<double>();
  c.always_positive_f1 = j.at("always_positive_f1").get<double>();
  c.frames_evaluated = j.at("frames_evaluated").get<std::size_t>();
  return c;
}

nlohmann::json RunRecord::to_json() const {
  nlohmann::json j{{"model", to_string(model)}, {"view", to_string(view)},  {"input_frames", input_frames},
                   {"fold", fold},              {"seed", seed},             {"train_ids", train_ids},
                   {"test_ids", test_ids},      {"parameter_checksum", parameter_checksum}};
  auto& log_json = j["log"] = nlohmann::json::array();
  for (const auto& e : log) {
    log_json.push_back({{"epoch", e.epoch}, {"loss", e.loss}, {"accuracy", e.accuracy}, {"lr", e.lr}});
  }
  return j;
}

// ---- data -------------------------------------------------------------------

std::size_t LoadedDataset::frames() const {
  if (manifest.clips.empty()) throw StanError(ErrorCategory::MalformedManifest, "manifest lists no clips");
  const std::size_t f = manifest.clips.front().frames;
  for (const auto& c : manifest.clips) {
    if (c.frames != f) {
      throw StanError(ErrorCategory::ShapeMismatch, "clips of different lengths (" + std::to_string(f) + " and " +
                                                        std::to_string(c.frames) + ") in one dataset");
    }
  }
  return f;
}

LoadedDataset load_dataset(const std::filesystem::path& manifest_path) {
  LoadedDataset d;
  d.manifest = read_manifest(manifest_path, true);
  const auto base = manifest_path.parent_path();
  for (const auto& c : d.manifest.clips) {
    try {
      d.clips.push_back(read_clip(base / c.path));
    } catch (const std::exception& ex) {
      throw StanError(ErrorCategory::MalformedManifest, "clip " + c.id + ": " + ex.what());
    }
  }
  return d;
}

// ---- explanation ------------------------------------------------------------

std::vector<std::uint8_t> evaluation_labels(const ClipEntry& entry, const std::vector<std::size_t>& sampled,
                                            SequenceLength length) {
  if (length == SequenceLength::Long) return entry.important;
  return take(entry.important, sampled);
}

ClipExplanation explain_clip(VideoClassifier<float>& model, const Tensor<float>& clip, const ClipEntry& entry,
                             ViewKind view, const ViewParams& params, const std::vector<SaliencyMethod>& methods,
                             const std::vector<SequenceLength>& lengths, const GridConfig& options) {
  const std::size_t frames = model.input_shape()[1];
  auto prepared = prepare_input(clip, entry, view, params, frames);
  ClipExplanation out;
  out.predicted = predict(model, prepared.input);
  out.sampled_indices = prepared.sampled_indices;

  const bool need_pass = std::any_of(methods.begin(), methods.end(),
                                     [](auto m) { return m != SaliencyMethod::SmoothGrad; });
  GradientPass<float> pass;
  if (need_pass) pass = gradient_pass(model, prepared.input, out.predicted, options.target);
  for (auto method : methods) {
    FrameScoreSeries base;
    switch (method) {
      case SaliencyMethod::Vanilla:
        base = normalize_scores(raw_frame_scores(pass.input_grad));
        break;
      case SaliencyMethod::GradCam:
        base = normalize_scores(raw_frame_scores(model.expand_cam(pass.cam)));
        break;
      case SaliencyMethod::SmoothGrad:
        base = frame_scores(smoothgrad(model, prepared.input, out.predicted, options.smooth_samples,
                                       options.smooth_sigma, options.explain_seed, options.target));
        break;
    }
    base.sampled_indices = prepared.sampled_indices;
    std::vector<FrameScoreSeries> per_length;
    for (auto length : lengths) {
      if (length == SequenceLength::Long && frames < entry.frames) {
        per_length.push_back(extend_to_long(base, entry.frames));
      } else {
        per_length.push_back(base);
      }
    }
    out.series.push_back(std::move(per_length));
  }
  return out;
}

// ---- shared assembly --------------------------------------------------------

namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

struct Unit {
  ModelKind model = ModelKind::Stan;
  ViewKind view = ViewKind::Global;
  std::size_t input_frames = 0;
  std::size_t fold = 0;
  std::vector<SequenceLength> lengths;  // lengths this model serves
  std::vector<std::size_t> calibration;
  std::vector<std::size_t> test;
  RunRecord record;
  std::map<std::size_t, ClipExplanation> explained;  // manifest index -> result
};

void explain_unit(Unit& unit, VideoClassifier<float>& model, const LoadedDataset& data, const ViewParams& params,
                  const GridConfig& options) {
  std::set<std::size_t> wanted(unit.calibration.begin(), unit.calibration.end());
  wanted.insert(unit.test.begin(), unit.test.end());
  for (auto i : wanted) {
    unit.explained.emplace(i, explain_clip(model, data.clips[i], data.manifest.clips[i], unit.view, params,
                                           options.methods, unit.lengths, options));
  }
}

// Runs `work(i)` for i in [0, n) on up to `jobs` threads; the first failure
// is rethrown after all workers stop.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& work) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        work(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::min(jobs, n);
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::vector<CellResult> assemble_cells(const LoadedDataset& data, const std::vector<Unit>& units,
                                       const std::vector<ModelKind>& models, const std::vector<ViewKind>& views,
                                       const GridConfig& options) {
  const auto& manifest = data.manifest;
  std::vector<CellResult> cells;
  for (auto model : models)
    for (auto view : views)
      for (std::size_t mi = 0; mi < options.methods.size(); ++mi)
        for (auto length : options.lengths) {
          CellResult cell;
          cell.key = {model, view, options.methods[mi], length};
          std::vector<BinaryCounts> per_class(manifest.num_classes);
          BinaryCounts pooled, always;
          std::vector<std::size_t> video_pred, video_label;
          bool any = false;
          for (const auto& unit : units) {
            if (unit.model != model || unit.view != view) continue;
            const auto lit = std::find(unit.lengths.begin(), unit.lengths.end(), length);
            if (lit == unit.lengths.end()) continue;
            const auto li = static_cast<std::size_t>(lit - unit.lengths.begin());
            any = true;

            std::vector<LabeledSeries> calib;
            for (auto i : unit.calibration) {
              const auto& ex = unit.explained.at(i);
              calib.push_back({ex.series[mi][li], evaluation_labels(manifest.clips[i], ex.sampled_indices, length)});
            }
            const auto theta = calibrate_threshold(calib, options.threshold_step);
            cell.thresholds.push_back(theta.threshold);
            cell.calibration_f1.push_back(theta.metric);

            for (auto i : unit.test) {
              const auto& entry = manifest.clips[i];
              const auto& ex = unit.explained.at(i);
              const auto& series = ex.series[mi][li];
              const auto labels = evaluation_labels(entry, ex.sampled_indices, length);
              const auto predicted = classify_frames(series, theta.threshold);
              for (std::size_t t = 0; t < labels.size(); ++t) {
                cell.frames.push_back({unit.fold, entry.id, t, labels[t], series.scores[t], predicted[t]});
                pooled.add(predicted[t], labels[t]);
                per_class[entry.label].add(predicted[t], labels[t]);
                always.add(true, labels[t]);
              }
              cell.videos.push_back({unit.fold, entry.id, entry.label, ex.predicted});
              video_pred.push_back(ex.predicted);
              video_label.push_back(entry.label);
            }
          }
          if (!any) continue;
          cell.video = classification_f1(video_pred, video_label, manifest.num_classes);
          for (const auto& c : per_class) cell.frame_f1_per_class.push_back(c.f1());
          cell.frame_f1 = pooled.f1();
          cell.always_positive_f1 = always.f1();
          cell.frames_evaluated = cell.frames.size();
          cells.push_back(std::move(cell));
        }
  return cells;
}

std::vector<std::string> ids_of(const DatasetManifest& m, const std::vector<std::size_t>& idx) {
  std::vector<std::string> out;
  for (auto i : idx) out.push_back(m.clips[i].id);
  return out;
}

}  // namespace

MetricsReport run_experiment_grid(const LoadedDataset& data, const GridConfig& grid, const ProgressFn& progress) {
  grid.validate();
  const auto& manifest = data.manifest;
  const std::size_t clip_frames = data.frames();
  if (grid.short_frames > clip_frames) {
    throw StanError(ErrorCategory::ShapeMismatch, "short_frames " + std::to_string(grid.short_frames) +
                                                      " exceeds clip length " + std::to_string(clip_frames));
  }
  const SplitPlan plan = grid.split == SplitKind::KFold ? kfold(manifest, grid.folds, grid.split_seed)
                                                        : leave_one_group_out(manifest);

  std::vector<Unit> units;
  for (auto model : grid.models)
    for (auto view : grid.views) {
      // Input length per served sequence length, merged when equal.
      std::map<std::size_t, std::vector<SequenceLength>> by_frames;
      for (auto length : grid.lengths) {
        const std::size_t k =
            model == ModelKind::Cnn && length == SequenceLength::Long ? clip_frames : grid.short_frames;
        by_frames[k].push_back(length);
      }
      for (const auto& [k, lengths] : by_frames)
        for (std::size_t f = 0; f < plan.folds; ++f) {
          Unit u;
          u.model = model;
          u.view = view;
          u.input_frames = k;
          u.fold = f;
          u.lengths = lengths;
          u.calibration = plan.train_indices(f);
          u.test = plan.test_indices(f);
          units.push_back(std::move(u));
        }
    }

  std::mutex progress_mutex;
  parallel_for(units.size(), grid.jobs, [&](std::size_t ui) {
    Unit& u = units[ui];
    TrainConfig tc = grid.train;
    tc.model = u.model;
    tc.view = u.view;
    tc.input_frames = u.input_frames;
    tc.seed = mix(grid.train.seed ^ mix(static_cast<std::uint64_t>(u.model) * 1000003 +
                                        static_cast<std::uint64_t>(u.view) * 1009 + u.input_frames * 101 + u.fold));
    auto model = build_model(tc, manifest.num_classes, manifest.height, manifest.width, tc.seed);
    std::vector<TrainingExample> examples;
    for (auto i : u.calibration) {
      auto prepared = prepare_input(data.clips[i], manifest.clips[i], u.view, tc.view_params, u.input_frames);
      examples.push_back({prepared.input, manifest.clips[i].label});
    }
    RunRecord& rec = u.record;
    rec.model = u.model;
    rec.view = u.view;
    rec.input_frames = u.input_frames;
    rec.fold = u.fold;
    rec.seed = tc.seed;
    rec.train_ids = ids_of(manifest, u.calibration);
    rec.test_ids = ids_of(manifest, u.test);
    train_model(*model, tc, examples, [&](const EpochLog& e) { rec.log.push_back(e); });
    examples.clear();
    rec.parameter_checksum = model->parameters().checksum();
    explain_unit(u, *model, data, tc.view_params, grid);
    if (progress) {
      std::lock_guard lock(progress_mutex);
      progress(to_string(u.model) + "/" + to_string(u.view) + "/frames=" + std::to_string(u.input_frames) +
               " fold " + std::to_string(u.fold + 1) + "/" + std::to_string(plan.folds) + " final loss " +
               std::to_string(rec.log.back().loss));
    }
  });

  MetricsReport report;
  report.dataset_id = manifest.dataset_id;
  report.num_classes = manifest.num_classes;
  report.clip_frames = clip_frames;
  report.config = grid.to_json();
  report.split = plan.to_json();
  report.cells = assemble_cells(data, units, grid.models, grid.views, grid);
  for (auto& u : units) report.runs.push_back(std::move(u.record));
  return report;
}

MetricsReport evaluate_models(const LoadedDataset& data, const std::vector<TrainedModel>& models,
                              const std::vector<std::size_t>& calibration, const std::vector<std::size_t>& test,
                              const GridConfig& options, const ProgressFn& progress) {
  const auto& manifest = data.manifest;
  const std::size_t clip_frames = data.frames();
  std::set<std::pair<ModelKind, ViewKind>> seen;
  std::vector<Unit> units;
  std::vector<ModelKind> kinds;
  std::vector<ViewKind> views;
  for (const auto& tm : models) {
    const auto kind = tm.model->kind();
    if (!seen.insert({kind, tm.view}).second) {
      throw std::invalid_argument("two checkpoints share model " + to_string(kind) + " and view " +
                                  to_string(tm.view));
    }
    const auto shape = tm.model->input_shape();
    if (shape[1] > clip_frames || shape[2] != manifest.height || shape[3] != manifest.width) {
      throw StanError(ErrorCategory::ShapeMismatch, "checkpoint input " + to_string(shape) +
                                                        " does not fit clips of " + std::to_string(clip_frames) +
                                                        "x" + std::to_string(manifest.height) + "x" +
                                                        std::to_string(manifest.width));
    }
    if (std::find(kinds.begin(), kinds.end(), kind) == kinds.end()) kinds.push_back(kind);
    if (std::find(views.begin(), views.end(), tm.view) == views.end()) views.push_back(tm.view);
    Unit u;
    u.model = kind;
    u.view = tm.view;
    u.input_frames = shape[1];
    u.lengths = options.lengths;
    u.calibration = calibration;
    u.test = test;
    units.push_back(std::move(u));
  }
  parallel_for(units.size(), options.jobs, [&](std::size_t ui) {
    explain_unit(units[ui], *models[ui].model, data, models[ui].view_params, options);
    if (progress) progress("explained " + to_string(units[ui].model) + "/" + to_string(units[ui].view));
  });
  MetricsReport report;
  report.dataset_id = manifest.dataset_id;
  report.num_classes = manifest.num_classes;
  report.clip_frames = clip_frames;
  report.config = options.to_json();
  report.split = {{"kind", "fixed"}, {"calibration", ids_of(manifest, calibration)}, {"test", ids_of(manifest, test)}};
  report.cells = assemble_cells(data, units, kinds, views, options);
  return report;
}

}  // namespace stan
