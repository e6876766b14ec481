#include "stan/train/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "stan/data/synth.hpp"
#include "stan/model/cnn_model.hpp"
#include "stan/model/stan_model.hpp"
#include "stan/ops.hpp"
#include "stan/train/optim.hpp"

namespace stan {

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("TrainConfig: " + what); };
  if (stan_scale != "desk" && stan_scale != "paper") fail("stan_scale must be desk or paper");
  if (input_frames == 0) fail("input_frames must be positive");
  if (!(lr > 0.0)) fail("lr must be positive");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) fail("betas must be in [0,1)");
  if (!(epsilon > 0.0)) fail("epsilon must be positive");
  if (epochs == 0) fail("epochs must be positive");
  if (warmup_epochs > epochs) fail("warmup_epochs must not exceed epochs");
  if (batch_size == 0) fail("batch_size must be >= 1");
  if (!(clip_norm > 0.0)) fail("clip_norm must be positive");
  view_params.validate();
}

nlohmann::json TrainConfig::to_json() const {
  return {{"model", to_string(model)},
          {"view", to_string(view)},
          {"stan_scale", stan_scale},
          {"input_frames", input_frames},
          {"lr", lr},
          {"weight_decay", weight_decay},
          {"beta1", beta1},
          {"beta2", beta2},
          {"epsilon", epsilon},
          {"warmup_epochs", warmup_epochs},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"clip_norm", clip_norm},
          {"seed", seed},
          {"roi_margin", view_params.roi_margin},
          {"confidence_floor", view_params.confidence_floor},
          {"blend_alpha", view_params.blend_alpha},
          {"min_roi_extent", view_params.min_roi_extent}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "model") c.model = parse_model_kind(value.get<std::string>());
    else if (key == "view") c.view = parse_view(value.get<std::string>());
    else if (key == "stan_scale") c.stan_scale = value.get<std::string>();
    else if (key == "input_frames") c.input_frames = value.get<std::size_t>();
    else if (key == "lr") c.lr = value.get<double>();
    else if (key == "weight_decay") c.weight_decay = value.get<double>();
    else if (key == "beta1") c.beta1 = value.get<double>();
    else if (key == "beta2") c.beta2 = value.get<double>();
    else if (key == "epsilon") c.epsilon = value.get<double>();
    else if (key == "warmup_epochs") c.warmup_epochs = value.get<std::size_t>();
    else if (key == "epochs") c.epochs = value.get<std::size_t>();
    else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
    else if (key == "clip_norm") c.clip_norm = value.get<double>();
    else if (key == "seed") c.seed = value.get<std::uint64_t>();
    else if (key == "roi_margin") c.view_params.roi_margin = value.get<double>();
    else if (key == "confidence_floor") c.view_params.confidence_floor = value.get<double>();
    else if (key == "blend_alpha") c.view_params.blend_alpha = value.get<double>();
    else if (key == "min_roi_extent") c.view_params.min_roi_extent = value.get<double>();
    else throw std::invalid_argument("TrainConfig: unknown key '" + key + "'");
  }
  return c;
}

PreparedClip prepare_input(const Tensor<float>& clip, const ClipEntry& entry, ViewKind view,
                           const ViewParams& params, std::size_t frames) {
  PreparedClip out;
  KeypointTrack track = entry.keypoints;
  if (frames == clip.dim(1)) {
    out.input = clip;
    out.sampled_indices.resize(frames);
    for (std::size_t i = 0; i < frames; ++i) out.sampled_indices[i] = i;
  } else {
    auto sampled = sample_frames(clip, frames);
    out.input = sampled.pixels;
    out.sampled_indices = sampled.indices;
    track.frames = take(entry.keypoints.frames, sampled.indices);
  }
  out.input = apply_view(out.input, track, view, params);
  return out;
}

std::unique_ptr<VideoClassifier<float>> build_model(const TrainConfig& config, std::size_t num_classes,
                                                    std::size_t height, std::size_t width, std::uint64_t seed) {
  if (config.model == ModelKind::Stan) {
    auto sc = config.stan_scale == "paper" ? StanConfig::paper(num_classes, config.input_frames, height, width)
                                           : StanConfig::desk(num_classes, config.input_frames, height, width);
    return std::make_unique<StanModel<float>>(sc, seed);
  }
  CnnConfig cc;
  cc.num_classes = num_classes;
  cc.frames = config.input_frames;
  cc.height = height;
  cc.width = width;
  return std::make_unique<CnnModel<float>>(cc, seed);
}

void train_model(VideoClassifier<float>& model, const TrainConfig& config,
                 const std::vector<TrainingExample>& examples,
                 const std::function<void(const EpochLog&)>& on_epoch) {
  config.validate();
  if (examples.empty()) throw std::invalid_argument("train_model: no training examples");
  for (const auto& e : examples) {
    if (e.input.shape() != model.input_shape()) {
      throw std::invalid_argument("train_model: example " + to_string(e.input.shape()) +
                                  " does not match model input " + to_string(model.input_shape()));
    }
    if (e.label >= model.num_classes()) throw std::invalid_argument("train_model: label out of range");
  }
  AdamW<float> optimizer({config.beta1, config.beta2, config.epsilon, config.weight_decay});
  const CosineSchedule schedule{config.lr, static_cast<double>(config.warmup_epochs),
                                static_cast<double>(config.epochs)};
  auto& params = model.parameters();
  params.set_requires_grad(true);
  model.set_training(true);

  const std::size_t n = examples.size(), batch = config.batch_size;
  const std::size_t steps = (n + batch - 1) / batch;
  std::vector<std::size_t> order(n);
  std::mt19937_64 rng(config.seed ^ 0xA5A5A5A5DEADBEEFull);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    EpochLog log;
    log.epoch = epoch;
    std::size_t correct = 0;
    for (std::size_t s = 0; s < steps; ++s) {
      const std::size_t begin = s * batch, end = std::min(n, begin + batch);
      const float weight = 1.0f / static_cast<float>(end - begin);
      params.zero_grad();
      for (std::size_t b = begin; b < end; ++b) {
        const auto& ex = examples[order[b]];
        auto result = model.forward(ex.input);
        auto loss = cross_entropy(result.logits, {ex.label});
        log.loss += static_cast<double>(loss.item());
        const auto& lv = result.logits.values();
        correct += static_cast<std::size_t>(std::max_element(lv.begin(), lv.end()) - lv.begin()) == ex.label;
        backward(scale(loss, weight));
      }
      clip_grad_norm(params, config.clip_norm);
      log.lr = schedule.lr_at(static_cast<double>(epoch) + (static_cast<double>(s) + 0.5) / static_cast<double>(steps));
      optimizer.step(params, log.lr);
    }
    log.loss /= static_cast<double>(n);
    log.accuracy = static_cast<double>(correct) / static_cast<double>(n);
    if (on_epoch) on_epoch(log);
  }
  params.zero_grad();
  model.set_training(false);
}

std::size_t predict(VideoClassifier<float>& model, const Tensor<float>& input) {
  NoGradGuard guard;
  const bool was_training = model.training();
  model.set_training(false);
  auto logits = model.forward(input).logits;
  model.set_training(was_training);
  const auto& v = logits.values();
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace stan
