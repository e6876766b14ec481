#include "stan/export.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "stan/serialize.hpp"

namespace stan {

nlohmann::json sidecar_json(const ExplanationRecord& record, const FrameScoreSeries& series) {
  nlohmann::json j;
  j["clip"] = record.clip_id;
  j["method"] = to_string(record.method);
  j["target_class"] = record.target_class;
  j["predicted_class"] = record.predicted_class;
  j["threshold"] = record.threshold ? nlohmann::json(*record.threshold) : nlohmann::json(nullptr);
  j["sampled_indices"] = record.sampled_indices;
  j["source_length"] = record.source_length;
  j["scores"] = series.scores;
  if (record.threshold) j["important"] = classify_frames(series, *record.threshold);
  j["extra"] = record.extra;
  return j;
}

std::string render_overlay(const Tensor<float>& clip, const Tensor<float>& volume) {
  if (clip.rank() != 4 || clip.dim(0) != 3 || clip.shape() != volume.shape()) {
    throw std::invalid_argument("render_overlay: clip " + to_string(clip.shape()) + " and volume " +
                                to_string(volume.shape()) + " must both be [3,T,H,W]");
  }
  const std::size_t frames = clip.dim(1), h = clip.dim(2), w = clip.dim(3), plane = frames * h * w;
  std::vector<float> sal(plane, 0.0f);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < plane; ++i) sal[i] += std::abs(volume[c * plane + i]) / 3.0f;
  const float peak = *std::max_element(sal.begin(), sal.end());

  const auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(frames))));
  const std::size_t rows = (frames + cols - 1) / cols;
  const std::size_t cell_w = 2 * w + 1, cell_h = h + 1;
  const std::size_t img_w = cols * cell_w, img_h = rows * cell_h;
  std::string pixels(img_w * img_h * 3, '\0');
  auto to_byte = [](float v) { return static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f))); };
  for (std::size_t t = 0; t < frames; ++t) {
    const std::size_t oy = (t / cols) * cell_h, ox = (t % cols) * cell_w;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t src = (t * h + y) * w + x;
        char* rgb = &pixels[((oy + y) * img_w + ox + x) * 3];
        for (std::size_t c = 0; c < 3; ++c) rgb[c] = to_byte(clip[c * plane + src]);
        char* gray = &pixels[((oy + y) * img_w + ox + w + x) * 3];
        const char g = to_byte(peak > 0.0f ? sal[src] / peak : 0.0f);
        gray[0] = gray[1] = gray[2] = g;
      }
  }
  return "P6\n" + std::to_string(img_w) + " " + std::to_string(img_h) + "\n255\n" + pixels;
}

void write_explanation(const std::filesystem::path& dir, const Tensor<float>& clip,
                       const SaliencyVolume<float>& volume, const FrameScoreSeries& series,
                       const ExplanationRecord& record) {
  const auto overlay = render_overlay(clip, volume.values);
  Tensor<float> scores(Shape{series.scores.size()});
  for (std::size_t t = 0; t < series.scores.size(); ++t) scores[t] = static_cast<float>(series.scores[t]);
  std::filesystem::create_directories(dir);
  write_file_atomic(dir / "saliency.stnt", encode_tensor(volume.values));
  write_file_atomic(dir / "scores.stnt", encode_tensor(scores));
  write_file_atomic(dir / "overlay.ppm", overlay);
  write_file_atomic(dir / "explanation.json", sidecar_json(record, series).dump(2) + "\n");
}

}  // namespace stan
