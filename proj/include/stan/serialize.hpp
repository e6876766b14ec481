#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "stan/tensor.hpp"

namespace stan {

// STNT: "STNT", version byte, rank byte, u32 LE extents, f32 LE payload.
inline constexpr char kTensorMagic[4] = {'S', 'T', 'N', 'T'};
inline constexpr std::uint8_t kTensorVersion = 1;

template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& tensor);
template <typename T>
Tensor<T> read_tensor(std::istream& is);

template <typename T>
std::string encode_tensor(const Tensor<T>& tensor);
template <typename T>
Tensor<T> decode_tensor(const std::string& bytes);

// Little-endian primitives shared by the binary container formats.
void write_u32(std::ostream& os, std::uint32_t v);
std::uint32_t read_u32(std::istream& is);
void write_f32(std::ostream& os, float v);
float read_f32(std::istream& is);

// Writes `bytes` to `path` through a sibling temp file and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace stan
