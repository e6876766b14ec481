#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "stan/data/manifest.hpp"
#include "stan/saliency.hpp"
#include "stan/train/metrics.hpp"
#include "stan/train/splits.hpp"
#include "stan/train/trainer.hpp"
#include "json.hpp"

namespace stan {

// Short cells score the sampled frames against the sampled labels; long
// cells score every frame of the source clip (STAN through extend_to_long,
// the CNN directly on the full clip).
enum class SequenceLength { Short, Long };

std::string to_string(SequenceLength length);
SequenceLength parse_length(const std::string& name);

struct GridConfig {
  std::vector<ModelKind> models{ModelKind::Stan};
  std::vector<ViewKind> views{ViewKind::Global, ViewKind::Local, ViewKind::GlobalLocal};
  std::vector<SaliencyMethod> methods{SaliencyMethod::Vanilla, SaliencyMethod::SmoothGrad, SaliencyMethod::GradCam};
  std::vector<SequenceLength> lengths{SequenceLength::Short};
  SplitKind split = SplitKind::KFold;
  std::size_t folds = 5;
  std::uint64_t split_seed = 0;
  TrainConfig train;  // model, view and input_frames are set per run
  std::size_t short_frames = 20;
  std::size_t smooth_samples = 25;
  double smooth_sigma = 0.15;
  std::uint64_t explain_seed = 0;
  GradientTarget target = GradientTarget::Logit;
  double threshold_step = 0.01;
  std::size_t jobs = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static GridConfig from_json(const nlohmann::json& j);
};

struct CellKey {
  ModelKind model = ModelKind::Stan;
  ViewKind view = ViewKind::Global;
  SaliencyMethod method = SaliencyMethod::Vanilla;
  SequenceLength length = SequenceLength::Short;

  std::string id() const;  // e.g. "stan-global-local-vanilla-short"
  bool operator==(const CellKey&) const = default;
};

struct FramePrediction {
  std::size_t fold = 0;
  std::string clip;
  std::size_t frame = 0;  // position in the evaluated sequence
  std::uint8_t label = 0;
  double score = 0.0;
  std::uint8_t predicted = 0;
};

struct VideoPrediction {
  std::size_t fold = 0;
  std::string clip;
  std::size_t label = 0;
  std::size_t predicted = 0;
};

struct CellResult {
  CellKey key;
  std::vector<double> thresholds;       // per fold, calibrated on its training portion
  std::vector<double> calibration_f1;   // per fold
  ClassificationScores video;
  std::vector<double> frame_f1_per_class;  // frames of clips of each true class
  double frame_f1 = 0.0;                   // pooled over every test frame of every fold
  double always_positive_f1 = 0.0;
  std::size_t frames_evaluated = 0;
  std::vector<FramePrediction> frames;  // raw, may be empty when loaded from a summary
  std::vector<VideoPrediction> videos;

  nlohmann::json summary_json() const;
  static CellResult from_summary_json(const nlohmann::json& j);
};

// One trained model: (model kind, view, input frames, fold).
struct RunRecord {
  ModelKind model = ModelKind::Stan;
  ViewKind view = ViewKind::Global;
  std::size_t input_frames = 0;
  std::size_t fold = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
  std::vector<EpochLog> log;
  std::uint64_t parameter_checksum = 0;

  nlohmann::json to_json() const;
};

struct MetricsReport {
  std::string dataset_id;
  std::size_t num_classes = 0;
  std::size_t clip_frames = 0;
  nlohmann::json config;
  nlohmann::json split;
  std::vector<CellResult> cells;
  std::vector<RunRecord> runs;
};

struct LoadedDataset {
  DatasetManifest manifest;
  std::vector<Tensor<float>> clips;  // manifest order
  std::size_t frames() const;        // common clip length; throws if mixed
};

LoadedDataset load_dataset(const std::filesystem::path& manifest_path);

using ProgressFn = std::function<void(const std::string&)>;

MetricsReport run_experiment_grid(const LoadedDataset& data, const GridConfig& grid, const ProgressFn& progress = {});

// Frame scores, predicted class and evaluation labels of one clip under one
// trained model, for each requested method and length.
struct ClipExplanation {
  std::size_t predicted = 0;
  std::vector<std::size_t> sampled_indices;
  // [method][length] -> scores over the evaluated sequence
  std::vector<std::vector<FrameScoreSeries>> series;
};

ClipExplanation explain_clip(VideoClassifier<float>& model, const Tensor<float>& clip, const ClipEntry& entry,
                             ViewKind view, const ViewParams& params, const std::vector<SaliencyMethod>& methods,
                             const std::vector<SequenceLength>& lengths, const GridConfig& options);

// Labels of the evaluated sequence for a clip.
std::vector<std::uint8_t> evaluation_labels(const ClipEntry& entry, const std::vector<std::size_t>& sampled,
                                            SequenceLength length);

// Evaluates already trained models on every clip of a dataset. Each model
// calibrates theta on `calibration` (indices into the manifest) and is
// scored on `test`.
struct TrainedModel {
  VideoClassifier<float>* model = nullptr;
  ViewKind view = ViewKind::Global;
  ViewParams view_params;
};

MetricsReport evaluate_models(const LoadedDataset& data, const std::vector<TrainedModel>& models,
                              const std::vector<std::size_t>& calibration, const std::vector<std::size_t>& test,
                              const GridConfig& options, const ProgressFn& progress = {});

}  // namespace stan
