#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "stan/data/manifest.hpp"
#include "stan/model/classifier.hpp"
#include "stan/views.hpp"
#include "json.hpp"

namespace stan {

struct TrainConfig {
  ModelKind model = ModelKind::Stan;
  ViewKind view = ViewKind::Global;
  std::string stan_scale = "desk";  // desk | paper
  std::size_t input_frames = 20;    // frames the model consumes; clips are sampled down to this
  double lr = 1e-3;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t warmup_epochs = 2;
  std::size_t epochs = 30;
  std::size_t batch_size = 8;
  double clip_norm = 1.0;
  std::uint64_t seed = 0;
  ViewParams view_params{0.1, 0.3, 0.5, 12.0};

  void validate() const;  // throws std::invalid_argument
  nlohmann::json to_json() const;
  // Missing keys keep their defaults; unknown keys are rejected.
  static TrainConfig from_json(const nlohmann::json& j);
};

struct TrainingExample {
  Tensor<float> input;  // view applied, sampled to the model's frame count
  std::size_t label = 0;
};

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;
  double lr = 0.0;
};

// Sampling to `frames` (identity when equal) followed by the view transform.
struct PreparedClip {
  Tensor<float> input;
  std::vector<std::size_t> sampled_indices;
};
PreparedClip prepare_input(const Tensor<float>& clip, const ClipEntry& entry, ViewKind view,
                           const ViewParams& params, std::size_t frames);

std::unique_ptr<VideoClassifier<float>> build_model(const TrainConfig& config, std::size_t num_classes,
                                                    std::size_t height, std::size_t width, std::uint64_t seed);

// Mini-batches realized by gradient accumulation over single clips, global
// norm clipping, one AdamW step per batch, lr evaluated at the middle of
// each step's epoch interval.
void train_model(VideoClassifier<float>& model, const TrainConfig& config,
                 const std::vector<TrainingExample>& examples,
                 const std::function<void(const EpochLog&)>& on_epoch = {});

// Argmax of the eval-mode logits.
std::size_t predict(VideoClassifier<float>& model, const Tensor<float>& input);

}  // namespace stan
