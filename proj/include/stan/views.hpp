#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stan/tensor.hpp"

namespace stan {

struct Joint {
  int joint_id = 0;
  double x = 0.0;  // pixels, origin top-left
  double y = 0.0;
  double confidence = 1.0;
  bool operator==(const Joint&) const = default;
};

// One list of joints per frame.
struct KeypointTrack {
  std::vector<std::vector<Joint>> frames;
  bool operator==(const KeypointTrack&) const = default;
};

enum class ViewKind { Global, Local, GlobalLocal };

std::string to_string(ViewKind view);
ViewKind parse_view(const std::string& name);

struct ViewParams {
  double roi_margin = 0.1;        // fraction of the box width/height added per side
  double confidence_floor = 0.3;  // joints below this are ignored
  double blend_alpha = 0.5;       // weight of the original pixels outside the ROI
  double min_roi_extent = 0.0;    // pixels; boxes narrower than this grow about their centre

  void validate() const;
};

// Inclusive real-valued box in pixel coordinates.
struct RoiBox {
  double x0, y0, x1, y1;
  bool contains(std::size_t x, std::size_t y) const {
    return x0 <= static_cast<double>(x) && static_cast<double>(x) <= x1 && y0 <= static_cast<double>(y) &&
           static_cast<double>(y) <= y1;
  }
};

// Per-frame binary masks, frames x height x width.
struct RoiMask {
  std::size_t frames = 0, height = 0, width = 0;
  std::vector<RoiBox> boxes;
  std::vector<std::uint8_t> bits;

  bool at(std::size_t t, std::size_t y, std::size_t x) const { return bits[(t * height + y) * width + x] != 0; }
};

// Bounding box of the confident joints of each frame, grown to
// `min_extent`, dilated by `margin`, clamped to the frame. Frames without a
// confident joint reuse the previous frame's box (the next one at the start).
RoiMask roi_mask(const KeypointTrack& track, std::size_t height, std::size_t width, double margin,
                 double confidence_floor, double min_extent = 0.0);

// Zeroes every pixel outside the mask, in every channel. clip is [3,T,H,W].
template <typename T>
Tensor<T> make_local(const Tensor<T>& clip, const RoiMask& mask);

// alpha*clip + (1-alpha)*local; pixels where local equals clip are copied
// unchanged so the ROI stays bit-identical.
template <typename T>
Tensor<T> make_global_local(const Tensor<T>& clip, const Tensor<T>& local, double alpha);

template <typename T>
Tensor<T> apply_view(const Tensor<T>& clip, const KeypointTrack& track, ViewKind view, const ViewParams& params);

}  // namespace stan
