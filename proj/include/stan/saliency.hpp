#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "stan/model/classifier.hpp"
#include "stan/tensor.hpp"

namespace stan {

enum class SaliencyMethod { Vanilla, SmoothGrad, GradCam };

std::string to_string(SaliencyMethod method);
SaliencyMethod parse_method(const std::string& name);

// What the attribution differentiates: the pre-softmax class logit, or the
// cross-entropy loss of that class.
enum class GradientTarget { Logit, Loss };

template <typename T>
struct SaliencyVolume {
  Tensor<T> values;  // [3,T,H,W], aligned with the explained clip
  SaliencyMethod method = SaliencyMethod::Vanilla;
  std::size_t target_class = 0;
};

struct FrameScoreSeries {
  std::vector<double> scores;  // in [0,1]
  // Position of each scored frame in the source sequence; empty when the
  // series covers the source one-to-one.
  std::vector<std::size_t> sampled_indices;
};

struct ThresholdModel {
  double threshold = 0.0;
  double metric = 0.0;  // pooled frame F1 at `threshold`
  double step = 0.01;
};

struct LabeledSeries {
  FrameScoreSeries series;
  std::vector<std::uint8_t> labels;  // 1 = important
};

// Result of one forward and backward pass.
template <typename T>
struct GradientPass {
  Tensor<T> logits;
  Tensor<T> input_grad;  // same shape as the clip
  Tensor<T> cam;         // Grad-CAM map over the model's cam activation grid
};

// Forward + backward from the class target with parameters frozen and the
// model in eval mode; the model's flags are restored afterwards.
template <typename T>
GradientPass<T> gradient_pass(VideoClassifier<T>& model, const Tensor<T>& clip, std::size_t class_index,
                              GradientTarget target = GradientTarget::Logit);

template <typename T>
SaliencyVolume<T> vanilla_grad(VideoClassifier<T>& model, const Tensor<T>& clip, std::size_t class_index,
                               GradientTarget target = GradientTarget::Logit);

// The noisy input of SmoothGrad sample `index`: clip + N(0, (sigma*range)^2).
template <typename T>
Tensor<T> smoothgrad_input(const Tensor<T>& clip, double sigma, std::uint64_t seed, std::size_t index);

template <typename T>
SaliencyVolume<T> smoothgrad(VideoClassifier<T>& model, const Tensor<T>& clip, std::size_t class_index,
                             std::size_t n_samples, double sigma, std::uint64_t seed,
                             GradientTarget target = GradientTarget::Logit);

template <typename T>
SaliencyVolume<T> gradcam(VideoClassifier<T>& model, const Tensor<T>& clip, std::size_t class_index,
                          GradientTarget target = GradientTarget::Logit);

// ReLU(sum_c mean(G_c) * A_c) for activation and gradient of shape [C, ...];
// the result drops the channel axis.
template <typename T>
Tensor<T> gradcam_map(const Tensor<T>& activation, std::span<const T> gradient);

// Mean |attribution| per frame of a [C,T,H,W] volume.
template <typename T>
std::vector<double> raw_frame_scores(const Tensor<T>& volume);

// Per-video min-max; a constant series maps to 0.5.
FrameScoreSeries normalize_scores(const std::vector<double>& raw);

template <typename T>
FrameScoreSeries frame_scores(const SaliencyVolume<T>& volume) {
  return normalize_scores(raw_frame_scores(volume.values));
}

// Pooled frame F1 of `score > theta` over every series.
double pooled_frame_f1(const std::vector<LabeledSeries>& set, double theta);

ThresholdModel calibrate_threshold(const std::vector<LabeledSeries>& set, double step = 0.01);

std::vector<std::uint8_t> classify_frames(const FrameScoreSeries& series, double theta);

// Nearest sampled score for every frame of a length-`length` sequence; ties
// go to the earlier sample.
FrameScoreSeries extend_to_long(const FrameScoreSeries& series, std::size_t length);

// Full-length frame scores of the patched-image model: input gradient
// aggregated per frame.
template <typename T>
FrameScoreSeries frame_scores_cnn(VideoClassifier<T>& model, const Tensor<T>& clip, std::size_t class_index);

}  // namespace stan
