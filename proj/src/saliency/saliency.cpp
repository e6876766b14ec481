#include "stan/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "stan/ops.hpp"

namespace stan {

std::string to_string(SaliencyMethod method) {
  switch (method) {
    case SaliencyMethod::Vanilla: return "vanilla";
    case SaliencyMethod::SmoothGrad: return "smoothgrad";
    case SaliencyMethod::GradCam: return "gradcam";
  }
  return "?";
}

SaliencyMethod parse_method(const std::string& name) {
  if (name == "vanilla") return SaliencyMethod::Vanilla;
  if (name == "smoothgrad") return SaliencyMethod::SmoothGrad;
  if (name == "gradcam") return SaliencyMethod::GradCam;
  throw std::invalid_argument("unknown method '" + name + "' (expected vanilla|smoothgrad|gradcam)");
}

namespace {

// Freezes parameters and switches to eval mode for the lifetime of the guard.
template <typename T>
class ExplainGuard {
 public:
  explicit ExplainGuard(VideoClassifier<T>& model) : model_(model), training_(model.training()) {
    for (const auto& p : model.parameters().entries()) flags_.push_back(p.tensor.requires_grad());
    model.parameters().set_requires_grad(false);
    model.set_training(false);
  }
  ~ExplainGuard() {
    auto& entries = model_.parameters().entries();
    for (std::size_t i = 0; i < entries.size(); ++i) entries[i].tensor.set_requires_grad(flags_[i]);
    model_.set_training(training_);
  }
  ExplainGuard(const ExplainGuard&) = delete;
  ExplainGuard& operator=(const ExplainGuard&) = delete;

 private:
  VideoClassifier<T>& model_;
  bool training_;
  std::vector<bool> flags_;
};

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

template <typename T>
void check_clip(const VideoClassifier<T>& model, const Tensor<T>& clip, std::size_t class_index) {
  if (class_index >= model.num_classes()) {
    throw std::invalid_argument("class index " + std::to_string(class_index) + " out of range for " +
                                std::to_string(model.num_classes()) + " classes");
  }
  if (clip.shape() != model.input_shape()) {
    throw std::invalid_argument("clip " + to_string(clip.shape()) + " does not match model input " +
                                to_string(model.input_shape()));
  }
}

}  // namespace

template <typename T>
Tensor<T> gradcam_map(const Tensor<T>& activation, std::span<const T> gradient) {
  if (activation.rank() < 2 || gradient.size() != activation.numel()) {
    throw std::invalid_argument("gradcam_map: activation " + to_string(activation.shape()) +
                                " and gradient sizes differ");
  }
  const std::size_t channels = activation.dim(0), positions = activation.numel() / channels;
  std::vector<T> map(positions, T(0));
  for (std::size_t c = 0; c < channels; ++c) {
    T w = T(0);
    for (std::size_t p = 0; p < positions; ++p) w += gradient[c * positions + p];
    w /= static_cast<T>(positions);
    for (std::size_t p = 0; p < positions; ++p) map[p] += w * activation[c * positions + p];
  }
  for (auto& v : map) v = std::max(v, T(0));
  return Tensor<T>(Shape(activation.shape().begin() + 1, activation.shape().end()), std::move(map));
}

template <typename T>
GradientPass<T> gradient_pass(VideoClassifier<T>& model, const Tensor<T>& clip, std::size_t class_index,
                              GradientTarget target) {
  check_clip(model, clip, class_index);
  ExplainGuard<T> guard(model);
  Tensor<T> x = clip.clone();
  x.set_requires_grad(true);
  auto result = model.forward(x);
  Tensor<T> objective = target == GradientTarget::Logit ? pick(result.logits, class_index)
                                                        : cross_entropy(result.logits, {class_index});
  backward(objective);

  GradientPass<T> pass;
  pass.logits = result.logits.detach();
  const auto gx = x.mutable_grad();
  pass.input_grad = Tensor<T>(clip.shape(), std::vector<T>(gx.begin(), gx.end()));
  const auto& act = result.cam_activation;
  pass.cam = gradcam_map(act, act.has_grad() ? act.grad() : std::span<const T>(act.mutable_grad()));
  return pass;
}

template <typename T>
SaliencyVolume<T> vanilla_grad(VideoClassifier<T>& model, const Tensor<T>& clip, std::size_t class_index,
                               GradientTarget target) {
  auto pass = gradient_pass(model, clip, class_index, target);
  return {pass.input_grad, SaliencyMethod::Vanilla, class_index};
}

template <typename T>
Tensor<T> smoothgrad_input(const Tensor<T>& clip, double sigma, std::uint64_t seed, std::size_t index) {
  Tensor<T> noisy = clip.clone();
  if (sigma == 0.0) return noisy;
  const auto [lo, hi] = std::minmax_element(clip.values().begin(), clip.values().end());
  const double stddev = sigma * static_cast<double>(*hi - *lo);
  if (stddev == 0.0) return noisy;
  std::mt19937_64 rng(splitmix64(seed ^ splitmix64(index)));
  std::normal_distribution<double> noise(0.0, stddev);
  for (std::size_t i = 0; i < noisy.numel(); ++i) noisy[i] += static_cast<T>(noise(rng));
  return noisy;
}

template <typename T>
SaliencyVolume<T> smoothgrad(VideoClassifier<T>& model, const Tensor<T>& clip, std::size_t class_index,
                             std::size_t n_samples, double sigma, std::uint64_t seed, GradientTarget target) {
  if (n_samples == 0) throw std::invalid_argument("smoothgrad: n_samples must be >= 1");
  if (!(sigma >= 0.0)) throw std::invalid_argument("smoothgrad: sigma must be >= 0");
  check_clip(model, clip, class_index);
  Tensor<T> total(clip.shape());
  for (std::size_t i = 0; i < n_samples; ++i) {
    auto pass = gradient_pass(model, smoothgrad_input(clip, sigma, seed, i), class_index, target);
    for (std::size_t j = 0; j < total.numel(); ++j) total[j] += pass.input_grad[j];
  }
  const T n = static_cast<T>(n_samples);
  for (std::size_t j = 0; j < total.numel(); ++j) total[j] /= n;
  return {total, SaliencyMethod::SmoothGrad, class_index};
}

template <typename T>
SaliencyVolume<T> gradcam(VideoClassifier<T>& model, const Tensor<T>& clip, std::size_t class_index,
                          GradientTarget target) {
  auto pass = gradient_pass(model, clip, class_index, target);
  return {model.expand_cam(pass.cam), SaliencyMethod::GradCam, class_index};
}

template <typename T>
std::vector<double> raw_frame_scores(const Tensor<T>& volume) {
  if (volume.rank() != 4) throw std::invalid_argument("raw_frame_scores: expected [C,T,H,W], got " +
                                                      to_string(volume.shape()));
  const std::size_t channels = volume.dim(0), frames = volume.dim(1), plane = volume.dim(2) * volume.dim(3);
  std::vector<double> raw(frames, 0.0);
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t t = 0; t < frames; ++t) {
      const std::size_t base = (c * frames + t) * plane;
      double acc = 0.0;
      for (std::size_t i = 0; i < plane; ++i) acc += std::abs(static_cast<double>(volume[base + i]));
      raw[t] += acc;
    }
  const double count = static_cast<double>(channels * plane);
  for (auto& r : raw) {
    r /= count;
    if (!std::isfinite(r)) throw std::invalid_argument("raw_frame_scores: non-finite attribution");
  }
  return raw;
}

FrameScoreSeries normalize_scores(const std::vector<double>& raw) {
  if (raw.empty()) throw std::invalid_argument("normalize_scores: empty series");
  const auto [lo, hi] = std::minmax_element(raw.begin(), raw.end());
  const double min = *lo, max = *hi;
  FrameScoreSeries series;
  series.scores.resize(raw.size());
  for (std::size_t t = 0; t < raw.size(); ++t) {
    series.scores[t] = max == min ? 0.5 : (raw[t] - min) / (max - min);
  }
  return series;
}

std::vector<std::uint8_t> classify_frames(const FrameScoreSeries& series, double theta) {
  std::vector<std::uint8_t> mask(series.scores.size());
  for (std::size_t t = 0; t < mask.size(); ++t) mask[t] = series.scores[t] > theta ? 1 : 0;
  return mask;
}

double pooled_frame_f1(const std::vector<LabeledSeries>& set, double theta) {
  std::size_t tp = 0, fp = 0, fn = 0;
  for (const auto& item : set) {
    if (item.labels.size() != item.series.scores.size()) {
      throw std::invalid_argument("calibration series and labels differ in length");
    }
    for (std::size_t t = 0; t < item.labels.size(); ++t) {
      const bool predicted = item.series.scores[t] > theta, actual = item.labels[t] != 0;
      tp += predicted && actual;
      fp += predicted && !actual;
      fn += !predicted && actual;
    }
  }
  const std::size_t denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

ThresholdModel calibrate_threshold(const std::vector<LabeledSeries>& set, double step) {
  if (!(step > 0.0 && step <= 1.0)) throw std::invalid_argument("calibrate_threshold: step must be in (0,1]");
  const auto steps = static_cast<std::size_t>(std::llround(1.0 / step));
  ThresholdModel best{0.0, -1.0, step};
  for (std::size_t k = 0; k <= steps; ++k) {
    const double theta = static_cast<double>(k) / static_cast<double>(steps);
    const double f1 = pooled_frame_f1(set, theta);
    if (f1 > best.metric) {
      best.threshold = theta;
      best.metric = f1;
    }
  }
  return best;
}

FrameScoreSeries extend_to_long(const FrameScoreSeries& series, std::size_t length) {
  const auto& idx = series.sampled_indices;
  if (idx.size() != series.scores.size() || idx.empty()) {
    throw std::invalid_argument("extend_to_long: series needs one sampled index per score");
  }
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= length || (i > 0 && idx[i] <= idx[i - 1])) {
      throw std::invalid_argument("extend_to_long: sampled indices must be strictly increasing and < " +
                                  std::to_string(length));
    }
  }
  FrameScoreSeries out;
  out.scores.resize(length);
  std::size_t s = 0;
  for (std::size_t j = 0; j < length; ++j) {
    // Advance while the next sample is strictly closer.
    while (s + 1 < idx.size()) {
      const std::size_t here = j > idx[s] ? j - idx[s] : idx[s] - j;
      const std::size_t next = j > idx[s + 1] ? j - idx[s + 1] : idx[s + 1] - j;
      if (next < here) ++s;
      else break;
    }
    out.scores[j] = series.scores[s];
  }
  return out;
}

template <typename T>
FrameScoreSeries frame_scores_cnn(VideoClassifier<T>& model, const Tensor<T>& clip, std::size_t class_index) {
  if (model.kind() != ModelKind::Cnn) throw std::invalid_argument("frame_scores_cnn: model is not the CNN");
  return frame_scores(vanilla_grad(model, clip, class_index));
}

#define STAN_INSTANTIATE(T)                                                                                    \
  template Tensor<T> gradcam_map<T>(const Tensor<T>&, std::span<const T>);                                     \
  template GradientPass<T> gradient_pass<T>(VideoClassifier<T>&, const Tensor<T>&, std::size_t, GradientTarget); \
  template SaliencyVolume<T> vanilla_grad<T>(VideoClassifier<T>&, const Tensor<T>&, std::size_t, GradientTarget); \
  template Tensor<T> smoothgrad_input<T>(const Tensor<T>&, double, std::uint64_t, std::size_t);                \
  template SaliencyVolume<T> smoothgrad<T>(VideoClassifier<T>&, const Tensor<T>&, std::size_t, std::size_t,    \
                                           double, std::uint64_t, GradientTarget);                             \
  template SaliencyVolume<T> gradcam<T>(VideoClassifier<T>&, const Tensor<T>&, std::size_t, GradientTarget);   \
  template std::vector<double> raw_frame_scores<T>(const Tensor<T>&);                                          \
  template FrameScoreSeries frame_scores_cnn<T>(VideoClassifier<T>&, const Tensor<T>&, std::size_t);

STAN_INSTANTIATE(float)
STAN_INSTANTIATE(double)

}  // namespace stan
