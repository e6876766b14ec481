#include "stan/views.hpp"

#include <algorithm>
#include <optional>
#include <stdexcept>

namespace stan {

std::string to_string(ViewKind view) {
  switch (view) {
    case ViewKind::Global: return "global";
    case ViewKind::Local: return "local";
    case ViewKind::GlobalLocal: return "global-local";
  }
  return "?";
}

ViewKind parse_view(const std::string& name) {
  if (name == "global") return ViewKind::Global;
  if (name == "local") return ViewKind::Local;
  if (name == "global-local" || name == "global+local") return ViewKind::GlobalLocal;
  throw std::invalid_argument("unknown view '" + name + "' (expected global|local|global-local)");
}

void ViewParams::validate() const {
  if (!(roi_margin >= 0.0)) throw std::invalid_argument("ViewParams: roi_margin must be >= 0");
  if (!(blend_alpha > 0.0 && blend_alpha < 1.0)) throw std::invalid_argument("ViewParams: blend_alpha must be in (0,1)");
  if (!(min_roi_extent >= 0.0)) throw std::invalid_argument("ViewParams: min_roi_extent must be >= 0");
}

namespace {

std::optional<RoiBox> confident_box(const std::vector<Joint>& joints, double floor) {
  std::optional<RoiBox> box;
  for (const auto& j : joints) {
    if (j.confidence < floor) continue;
    if (!box) {
      box = RoiBox{j.x, j.y, j.x, j.y};
    } else {
      box->x0 = std::min(box->x0, j.x);
      box->y0 = std::min(box->y0, j.y);
      box->x1 = std::max(box->x1, j.x);
      box->y1 = std::max(box->y1, j.y);
    }
  }
  return box;
}

void grow_to(double& lo, double& hi, double extent) {
  if (hi - lo >= extent) return;
  const double centre = 0.5 * (lo + hi);
  lo = centre - 0.5 * extent;
  hi = centre + 0.5 * extent;
}

}  // namespace

RoiMask roi_mask(const KeypointTrack& track, std::size_t height, std::size_t width, double margin,
                 double confidence_floor, double min_extent) {
  if (track.frames.empty()) throw std::invalid_argument("roi_mask: empty keypoint track");
  if (margin < 0.0) throw std::invalid_argument("roi_mask: margin must be >= 0");
  const std::size_t frames = track.frames.size();
  std::vector<std::optional<RoiBox>> raw(frames);
  for (std::size_t t = 0; t < frames; ++t) raw[t] = confident_box(track.frames[t], confidence_floor);

  auto first = std::find_if(raw.begin(), raw.end(), [](const auto& b) { return b.has_value(); });
  if (first == raw.end()) throw std::invalid_argument("roi_mask: no frame has a confident joint");

  RoiMask mask;
  mask.frames = frames;
  mask.height = height;
  mask.width = width;
  mask.boxes.resize(frames);
  mask.bits.assign(frames * height * width, 0);
  RoiBox carried = **first;
  for (std::size_t t = 0; t < frames; ++t) {
    if (raw[t]) {
      RoiBox b = *raw[t];
      grow_to(b.x0, b.x1, min_extent);
      grow_to(b.y0, b.y1, min_extent);
      const double dx = margin * (b.x1 - b.x0), dy = margin * (b.y1 - b.y0);
      b.x0 = std::max(0.0, b.x0 - dx);
      b.x1 = std::min(static_cast<double>(width - 1), b.x1 + dx);
      b.y0 = std::max(0.0, b.y0 - dy);
      b.y1 = std::min(static_cast<double>(height - 1), b.y1 + dy);
      carried = b;
    } else if (t == 0) {
      // Start of the sequence: take the first valid frame's box through the
      // same growth rules.
      RoiBox b = carried;
      grow_to(b.x0, b.x1, min_extent);
      grow_to(b.y0, b.y1, min_extent);
      const double dx = margin * (b.x1 - b.x0), dy = margin * (b.y1 - b.y0);
      b.x0 = std::max(0.0, b.x0 - dx);
      b.x1 = std::min(static_cast<double>(width - 1), b.x1 + dx);
      b.y0 = std::max(0.0, b.y0 - dy);
      b.y1 = std::min(static_cast<double>(height - 1), b.y1 + dy);
      carried = b;
    }
    mask.boxes[t] = carried;
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x)
        mask.bits[(t * height + y) * width + x] = carried.contains(x, y) ? 1 : 0;
  }
  return mask;
}

template <typename T>
Tensor<T> make_local(const Tensor<T>& clip, const RoiMask& mask) {
  if (clip.rank() != 4 || clip.dim(1) != mask.frames || clip.dim(2) != mask.height || clip.dim(3) != mask.width) {
    throw std::invalid_argument("make_local: clip " + to_string(clip.shape()) + " does not match mask extents");
  }
  Tensor<T> out = clip.clone();
  const std::size_t plane = mask.bits.size();
  for (std::size_t c = 0; c < clip.dim(0); ++c)
    for (std::size_t i = 0; i < plane; ++i)
      if (!mask.bits[i]) out[c * plane + i] = T(0);
  return out;
}

template <typename T>
Tensor<T> make_global_local(const Tensor<T>& clip, const Tensor<T>& local, double alpha) {
  if (clip.shape() != local.shape()) {
    throw std::invalid_argument("make_global_local: shape mismatch " + to_string(clip.shape()) + " vs " +
                                to_string(local.shape()));
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("make_global_local: alpha must be in [0,1]");
  const T a = static_cast<T>(alpha);
  Tensor<T> out(clip.shape());
  for (std::size_t i = 0; i < clip.numel(); ++i) {
    out[i] = local[i] == clip[i] ? clip[i] : a * clip[i] + (T(1) - a) * local[i];
  }
  return out;
}

template <typename T>
Tensor<T> apply_view(const Tensor<T>& clip, const KeypointTrack& track, ViewKind view, const ViewParams& params) {
  if (view == ViewKind::Global) return clip.clone();
  if (track.frames.size() != clip.dim(1)) {
    throw std::invalid_argument("apply_view: keypoint track has " + std::to_string(track.frames.size()) +
                                " frames, clip has " + std::to_string(clip.dim(1)));
  }
  const auto mask = roi_mask(track, clip.dim(2), clip.dim(3), params.roi_margin, params.confidence_floor,
                             params.min_roi_extent);
  auto local = make_local(clip, mask);
  if (view == ViewKind::Local) return local;
  return make_global_local(clip, local, params.blend_alpha);
}

template Tensor<float> make_local<float>(const Tensor<float>&, const RoiMask&);
template Tensor<double> make_local<double>(const Tensor<double>&, const RoiMask&);
template Tensor<float> make_global_local<float>(const Tensor<float>&, const Tensor<float>&, double);
template Tensor<double> make_global_local<double>(const Tensor<double>&, const Tensor<double>&, double);
template Tensor<float> apply_view<float>(const Tensor<float>&, const KeypointTrack&, ViewKind, const ViewParams&);
template Tensor<double> apply_view<double>(const Tensor<double>&, const KeypointTrack&, ViewKind, const ViewParams&);

}  // namespace stan
