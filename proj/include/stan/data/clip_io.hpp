#pragma once

#include <filesystem>
#include <string>

#include "stan/tensor.hpp"

namespace stan {

// STNV: "STNV", version byte, extents (3,T,H,W) as u32 LE, f32 LE payload.
inline constexpr char kClipMagic[4] = {'S', 'T', 'N', 'V'};
inline constexpr std::uint8_t kClipVersion = 1;

std::string encode_clip(const Tensor<float>& clip);
Tensor<float> decode_clip(const std::string& bytes);

void write_clip(const std::filesystem::path& path, const Tensor<float>& clip);
Tensor<float> read_clip(const std::filesystem::path& path);
// Extents from the header alone.
Shape read_clip_shape(const std::filesystem::path& path);

}  // namespace stan
