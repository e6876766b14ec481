#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "stan/saliency.hpp"
#include "json.hpp"

namespace stan {

struct ExplanationRecord {
  std::string clip_id;
  SaliencyMethod method = SaliencyMethod::Vanilla;
  std::size_t target_class = 0;
  std::size_t predicted_class = 0;
  std::optional<double> threshold;
  std::vector<std::size_t> sampled_indices;
  std::size_t source_length = 0;
  nlohmann::json extra = nlohmann::json::object();
};

nlohmann::json sidecar_json(const ExplanationRecord& record, const FrameScoreSeries& series);

// Binary PPM: each frame's RGB pixels beside its grayscale saliency
// (mean |attribution| over channels, scaled per video), frames in a
// near-square grid.
std::string render_overlay(const Tensor<float>& clip, const Tensor<float>& volume);

// Writes saliency.stnt, scores.stnt, explanation.json and overlay.ppm into
// `dir`, each atomically.
void write_explanation(const std::filesystem::path& dir, const Tensor<float>& clip,
                       const SaliencyVolume<float>& volume, const FrameScoreSeries& series,
                       const ExplanationRecord& record);

}  // namespace stan
