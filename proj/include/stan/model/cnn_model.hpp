#pragma once

#include <array>
#include <cstdint>

#include "stan/model/classifier.hpp"
#include "stan/ops.hpp"

namespace stan {

// Patched-image baseline: a small per-frame convolutional encoder whose
// feature maps are tiled into one plane, then conv + max-pool + two fully
// connected layers.
struct CnnConfig {
  std::size_t num_classes = 4;
  std::size_t frames = 20;
  std::size_t height = 32;
  std::size_t width = 32;
  std::array<std::size_t, 3> encoder_channels{8, 8, 4};
  std::size_t head_channels = 8;
  std::size_t hidden = 64;

  // Feature-map extent of one frame after the three stride-2 encoder layers.
  std::size_t tile_height() const { return height / 8; }
  std::size_t tile_width() const { return width / 8; }
  // Smallest near-square grid covering `frames`: cols = ceil(sqrt(T)).
  std::size_t grid_cols() const;
  std::size_t grid_rows() const;

  void validate() const;
  nlohmann::json to_json() const;
  static CnnConfig from_json(const nlohmann::json& j);
  bool operator==(const CnnConfig&) const = default;
};

template <typename T>
class CnnModel final : public VideoClassifier<T> {
 public:
  CnnModel(const CnnConfig& config, std::uint64_t seed);

  const CnnConfig& config() const { return config_; }

  ModelKind kind() const override { return ModelKind::Cnn; }
  std::size_t num_classes() const override { return config_.num_classes; }
  Shape input_shape() const override;
  ForwardResult<T> forward(const Tensor<T>& clip) override;
  Tensor<T> expand_cam(const Tensor<T>& cam) const override;
  void set_training(bool on) override { training_ = on; }
  bool training() const override { return training_; }
  ParameterSet<T>& parameters() override { return params_; }
  const ParameterSet<T>& parameters() const override { return params_; }
  nlohmann::json config_json() const override { return config_.to_json(); }
  std::uint64_t seed() const override { return seed_; }

  // [3,T,H,W] -> [C_f, T, H/8, W/8]; frames never mix.
  Tensor<T> encode(const Tensor<T>& clip) const;
  // Encoded frames tiled row-major into [C_f, 1, rows*h, cols*w].
  Tensor<T> patched_image(const Tensor<T>& clip) const;
  Tensor<T> classify_patched(const Tensor<T>& clip) { return forward(clip).logits; }
  // Head applied to an already tiled plane.
  ForwardResult<T> classify_plane(const Tensor<T>& plane) const;

 private:
  CnnConfig config_;
  std::uint64_t seed_;
  bool training_ = false;
  ParameterSet<T> params_;
  std::array<Tensor<T>, 3> enc_w_, enc_b_;
  Tensor<T> conv_w_, conv_b_;
  Tensor<T> fc1_w_, fc1_b_, fc2_w_, fc2_b_;
};

// Inverse of the tiling: [C,1,rows*h,cols*w] -> [C,T,h,w].
template <typename T>
Tensor<T> untile_frames(const Tensor<T>& plane, std::size_t frames, std::size_t rows, std::size_t cols);

}  // namespace stan
