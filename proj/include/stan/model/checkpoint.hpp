#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "stan/model/classifier.hpp"
#include "json.hpp"

namespace stan {

// Checkpoint container: "STNK", version byte, u32 LE header length, JSON
// header (model kind, config, seed, tensor names, free-form metadata), then
// per tensor a u32 LE name length, the name, and an STNT blob.
inline constexpr char kCheckpointMagic[4] = {'S', 'T', 'N', 'K'};
inline constexpr std::uint8_t kCheckpointVersion = 1;

template <typename T>
std::string encode_checkpoint(const VideoClassifier<T>& model, const nlohmann::json& metadata);

template <typename T>
struct LoadedCheckpoint {
  std::unique_ptr<VideoClassifier<T>> model;
  nlohmann::json metadata;
};

template <typename T>
LoadedCheckpoint<T> decode_checkpoint(const std::string& bytes);

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const VideoClassifier<T>& model,
                     const nlohmann::json& metadata);
template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& path);

// Builds an untrained model of the given kind from its JSON config.
template <typename T>
std::unique_ptr<VideoClassifier<T>> make_model(ModelKind kind, const nlohmann::json& config, std::uint64_t seed);

}  // namespace stan
