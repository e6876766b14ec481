#pragma once

#include <string>

#include "stan/model/parameters.hpp"
#include "stan/tensor.hpp"
#include "json.hpp"

namespace stan {

enum class ModelKind { Stan, Cnn };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);

template <typename T>
struct ForwardResult {
  Tensor<T> logits;  // [num_classes]
  // Last convolutional/token representation, channel-first; target layer of
  // Grad-CAM.
  Tensor<T> cam_activation;
};

// Common surface of the video classifiers the explainers and the training
// harness operate on.
template <typename T>
class VideoClassifier {
 public:
  virtual ~VideoClassifier() = default;

  virtual ModelKind kind() const = 0;
  virtual std::size_t num_classes() const = 0;
  // [3, T, H, W]
  virtual Shape input_shape() const = 0;

  virtual ForwardResult<T> forward(const Tensor<T>& clip) = 0;

  // Maps a class activation map (the cam activation's layout without the
  // channel axis) to a per-pixel volume of the input shape.
  virtual Tensor<T> expand_cam(const Tensor<T>& cam) const = 0;

  virtual void set_training(bool on) = 0;
  virtual bool training() const = 0;

  virtual ParameterSet<T>& parameters() = 0;
  virtual const ParameterSet<T>& parameters() const = 0;

  virtual nlohmann::json config_json() const = 0;
  virtual std::uint64_t seed() const = 0;
};

}  // namespace stan
