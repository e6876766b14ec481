#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "stan/views.hpp"
#include "json.hpp"

namespace stan {

inline constexpr int kManifestVersion = 1;

struct ClipEntry {
  std::string id;
  std::string path;  // relative to the manifest's directory
  std::size_t label = 0;
  std::size_t group = 0;
  std::size_t frames = 0;
  std::vector<std::uint8_t> important;  // one flag per frame
  KeypointTrack keypoints;
  bool operator==(const ClipEntry&) const = default;
};

struct DatasetManifest {
  std::string dataset_id;
  std::size_t num_classes = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<ClipEntry> clips;
  nlohmann::json generator = nlohmann::json::object();  // provenance of the clips, free-form
  bool operator==(const DatasetManifest&) const = default;

  std::size_t index_of(const std::string& clip_id) const;
};

nlohmann::json manifest_to_json(const DatasetManifest& manifest);
// Throws StanError(MalformedManifest) on structural problems.
DatasetManifest manifest_from_json(const nlohmann::json& j);

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
// Parses and validates; with `check_files` every clip file must exist and
// carry extents (3, frames, height, width).
DatasetManifest read_manifest(const std::filesystem::path& path, bool check_files = true);

}  // namespace stan
