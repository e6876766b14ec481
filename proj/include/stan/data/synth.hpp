#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "stan/data/manifest.hpp"
#include "stan/tensor.hpp"
#include "json.hpp"

namespace stan {

// Planted-signal video generator. A red square sprite drifts inside the
// central box of the frame; during one contiguous active window it leaves
// the box and performs a class-specific motion. Frames of the window are
// the important ones.
struct SynthConfig {
  std::size_t num_classes = 4;
  std::size_t clips_per_class = 50;
  std::size_t frames = 20;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t sprite_size = 6;
  double clutter_density = 0.15;  // share of the frame covered by static rectangles
  double noise_sigma = 0.03;
  double window_min = 0.25;  // active window length as a fraction of frames
  double window_max = 0.5;
  std::size_t groups = 15;
  std::uint64_t seed = 0;

  static constexpr std::size_t kMaxClasses = 6;
  // Central box of the neutral drift, as fractions of the extents.
  static constexpr double kBoxLow = 0.4;
  static constexpr double kBoxHigh = 0.6;

  static SynthConfig short_preset();  // 20 frames
  static SynthConfig long_preset();   // 394 frames

  std::size_t min_window() const;
  std::size_t max_window() const;
  std::size_t clip_count() const { return num_classes * clips_per_class; }
  void validate() const;  // throws std::invalid_argument
  nlohmann::json to_json() const;
  static SynthConfig from_json(const nlohmann::json& j);
};

struct SyntheticClip {
  Tensor<float> pixels;  // [3,T,H,W] in [0,1]
  std::size_t label = 0;
  std::size_t group = 0;
  std::size_t window_start = 0;
  std::size_t window_length = 0;
  std::vector<std::uint8_t> important;
  KeypointTrack keypoints;  // sprite centroid, joint 0
};

// Clip `index` of the dataset; depends only on (config, index).
SyntheticClip synth_clip(const SynthConfig& config, std::size_t index);

// Writes clips/<id>.stnv and manifest.json under `out_dir`.
DatasetManifest generate(const SynthConfig& config, const std::filesystem::path& out_dir);

// Frame-importance read straight from the pixels: the sprite (red-dominant
// pixels) has left the central box.
std::vector<std::uint8_t> trivial_detector(const Tensor<float>& clip);

// round(i*(L-1)/(k-1)) for i < k.
std::vector<std::size_t> sample_indices(std::size_t length, std::size_t k);

struct SampledClip {
  Tensor<float> pixels;
  std::vector<std::size_t> indices;
};

SampledClip sample_frames(const Tensor<float>& clip, std::size_t k);

template <typename V>
std::vector<V> take(const std::vector<V>& values, const std::vector<std::size_t>& indices) {
  std::vector<V> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(values.at(i));
  return out;
}

}  // namespace stan
