#include "stan/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace stan {

void write_u32(std::ostream& os, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                         static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(bytes, 4);
}

std::uint32_t read_u32(std::istream& is) {
  unsigned char bytes[4];
  if (!is.read(reinterpret_cast<char*>(bytes), 4)) throw std::runtime_error("unexpected end of stream");
  return static_cast<std::uint32_t>(bytes[0]) | (static_cast<std::uint32_t>(bytes[1]) << 8) |
         (static_cast<std::uint32_t>(bytes[2]) << 16) | (static_cast<std::uint32_t>(bytes[3]) << 24);
}

void write_f32(std::ostream& os, float v) { write_u32(os, std::bit_cast<std::uint32_t>(v)); }

float read_f32(std::istream& is) { return std::bit_cast<float>(read_u32(is)); }

template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& tensor) {
  if (tensor.rank() > 255) throw std::invalid_argument("STNT: rank exceeds 255");
  os.write(kTensorMagic, 4);
  os.put(static_cast<char>(kTensorVersion));
  os.put(static_cast<char>(tensor.rank()));
  for (std::size_t e : tensor.shape()) write_u32(os, static_cast<std::uint32_t>(e));
  for (T v : tensor.data()) write_f32(os, static_cast<float>(v));
}

template <typename T>
Tensor<T> read_tensor(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kTensorMagic, 4) != 0) {
    throw std::runtime_error("STNT: bad magic");
  }
  const int version = is.get();
  if (version != kTensorVersion) throw std::runtime_error("STNT: unsupported version " + std::to_string(version));
  const int rank = is.get();
  if (rank <= 0) throw std::runtime_error("STNT: bad rank");
  Shape shape(static_cast<std::size_t>(rank));
  for (auto& e : shape) {
    e = read_u32(is);
    if (e == 0) throw std::runtime_error("STNT: zero extent");
  }
  std::vector<T> values(numel(shape));
  for (auto& v : values) v = static_cast<T>(read_f32(is));
  return Tensor<T>(std::move(shape), std::move(values));
}

template <typename T>
std::string encode_tensor(const Tensor<T>& tensor) {
  std::ostringstream os(std::ios::binary);
  write_tensor(os, tensor);
  return os.str();
}

template <typename T>
Tensor<T> decode_tensor(const std::string& bytes) {
  std::istringstream is(bytes, std::ios::binary);
  return read_tensor<T>(is);
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw std::runtime_error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

template void write_tensor<float>(std::ostream&, const Tensor<float>&);
template void write_tensor<double>(std::ostream&, const Tensor<double>&);
template Tensor<float> read_tensor<float>(std::istream&);
template Tensor<double> read_tensor<double>(std::istream&);
template std::string encode_tensor<float>(const Tensor<float>&);
template std::string encode_tensor<double>(const Tensor<double>&);
template Tensor<float> decode_tensor<float>(const std::string&);
template Tensor<double> decode_tensor<double>(const std::string&);

}  // namespace stan
