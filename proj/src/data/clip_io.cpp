#include "stan/data/clip_io.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "stan/serialize.hpp"

namespace stan {

namespace {

Shape read_header(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kClipMagic, 4) != 0) throw std::runtime_error("STNV: bad magic");
  const int version = is.get();
  if (version != kClipVersion) throw std::runtime_error("STNV: unsupported version " + std::to_string(version));
  Shape shape(4);
  for (auto& e : shape) e = read_u32(is);
  if (shape[0] != 3) throw std::runtime_error("STNV: expected 3 channels, got " + std::to_string(shape[0]));
  for (auto e : shape)
    if (e == 0) throw std::runtime_error("STNV: zero extent");
  return shape;
}

}  // namespace

std::string encode_clip(const Tensor<float>& clip) {
  if (clip.rank() != 4 || clip.dim(0) != 3) {
    throw std::invalid_argument("STNV: clip must be [3,T,H,W], got " + to_string(clip.shape()));
  }
  std::ostringstream os;
  os.write(kClipMagic, 4);
  os.put(static_cast<char>(kClipVersion));
  for (auto e : clip.shape()) write_u32(os, static_cast<std::uint32_t>(e));
  for (float v : clip.values()) write_f32(os, v);
  return os.str();
}

Tensor<float> decode_clip(const std::string& bytes) {
  std::istringstream is(bytes);
  Shape shape = read_header(is);
  const std::size_t n = numel(shape);
  if (bytes.size() != 5 + 16 + 4 * n) throw std::runtime_error("STNV: payload size does not match extents");
  std::vector<float> values(n);
  for (auto& v : values) v = read_f32(is);
  return Tensor<float>(std::move(shape), std::move(values));
}

void write_clip(const std::filesystem::path& path, const Tensor<float>& clip) {
  write_file_atomic(path, encode_clip(clip));
}

Tensor<float> read_clip(const std::filesystem::path& path) { return decode_clip(read_file(path)); }

Shape read_clip_shape(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  return read_header(is);
}

}  // namespace stan
