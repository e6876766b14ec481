#include "stan/model/checkpoint.hpp"

#include <sstream>
#include <stdexcept>

#include "stan/model/cnn_model.hpp"
#include "stan/model/stan_model.hpp"
#include "stan/serialize.hpp"

namespace stan {

template <typename T>
std::unique_ptr<VideoClassifier<T>> make_model(ModelKind kind, const nlohmann::json& config, std::uint64_t seed) {
  if (kind == ModelKind::Stan) return std::make_unique<StanModel<T>>(StanConfig::from_json(config), seed);
  return std::make_unique<CnnModel<T>>(CnnConfig::from_json(config), seed);
}

namespace {

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> named_tensors(const VideoClassifier<T>& model) {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  for (const auto& p : model.parameters().entries()) out.emplace_back(p.name, p.tensor);
  for (const auto& b : model.parameters().buffers()) {
    const std::size_t c = b.stats->mean.size();
    out.emplace_back(b.name + ".running_mean", Tensor<T>(Shape{c}, b.stats->mean));
    out.emplace_back(b.name + ".running_var", Tensor<T>(Shape{c}, b.stats->var));
  }
  return out;
}

}  // namespace

template <typename T>
std::string encode_checkpoint(const VideoClassifier<T>& model, const nlohmann::json& metadata) {
  const auto tensors = named_tensors(model);
  nlohmann::json header;
  header["model_kind"] = to_string(model.kind());
  header["config"] = model.config_json();
  header["seed"] = model.seed();
  header["metadata"] = metadata;
  auto& names = header["tensors"] = nlohmann::json::array();
  for (const auto& [name, t] : tensors) names.push_back(name);
  const std::string text = header.dump(2);

  std::ostringstream os(std::ios::binary);
  os.write(kCheckpointMagic, 4);
  os.put(static_cast<char>(kCheckpointVersion));
  write_u32(os, static_cast<std::uint32_t>(text.size()));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : tensors) {
    write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(os, t);
  }
  return os.str();
}

template <typename T>
LoadedCheckpoint<T> decode_checkpoint(const std::string& bytes) {
  std::istringstream is(bytes, std::ios::binary);
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != std::string(kCheckpointMagic, 4)) {
    throw std::runtime_error("checkpoint: bad magic");
  }
  if (is.get() != kCheckpointVersion) throw std::runtime_error("checkpoint: unsupported version");
  const std::uint32_t len = read_u32(is);
  std::string text(len, '\0');
  if (!is.read(text.data(), len)) throw std::runtime_error("checkpoint: truncated header");
  const auto header = nlohmann::json::parse(text);
  LoadedCheckpoint<T> out;
  out.model = make_model<T>(parse_model_kind(header.at("model_kind").get<std::string>()), header.at("config"),
                            header.at("seed").get<std::uint64_t>());
  out.metadata = header.value("metadata", nlohmann::json::object());
  auto& params = out.model->parameters();
  for (std::size_t i = 0; i < header.at("tensors").size(); ++i) {
    const std::uint32_t name_len = read_u32(is);
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw std::runtime_error("checkpoint: truncated tensor name");
    auto t = read_tensor<T>(is);
    const std::string mean_suffix = ".running_mean", var_suffix = ".running_var";
    auto ends_with = [&](const std::string& s) {
      return name.size() > s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
    };
    if (ends_with(mean_suffix)) {
      params.buffer(name.substr(0, name.size() - mean_suffix.size())).mean = t.values();
    } else if (ends_with(var_suffix)) {
      params.buffer(name.substr(0, name.size() - var_suffix.size())).var = t.values();
    } else {
      auto dst = params.get(name);
      if (dst.shape() != t.shape()) {
        throw std::runtime_error("checkpoint: tensor " + name + " has shape " + to_string(t.shape()) +
                                 ", model expects " + to_string(dst.shape()));
      }
      std::copy(t.data().begin(), t.data().end(), dst.data().begin());
    }
  }
  return out;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const VideoClassifier<T>& model,
                     const nlohmann::json& metadata) {
  write_file_atomic(path, encode_checkpoint(model, metadata));
}

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint<T>(read_file(path));
}

template std::string encode_checkpoint<float>(const VideoClassifier<float>&, const nlohmann::json&);
template std::string encode_checkpoint<double>(const VideoClassifier<double>&, const nlohmann::json&);
template LoadedCheckpoint<float> decode_checkpoint<float>(const std::string&);
template LoadedCheckpoint<double> decode_checkpoint<double>(const std::string&);
template void save_checkpoint<float>(const std::filesystem::path&, const VideoClassifier<float>&,
                                     const nlohmann::json&);
template void save_checkpoint<double>(const std::filesystem::path&, const VideoClassifier<double>&,
                                      const nlohmann::json&);
template LoadedCheckpoint<float> load_checkpoint<float>(const std::filesystem::path&);
template LoadedCheckpoint<double> load_checkpoint<double>(const std::filesystem::path&);
template std::unique_ptr<VideoClassifier<float>> make_model<float>(ModelKind, const nlohmann::json&, std::uint64_t);
template std::unique_ptr<VideoClassifier<double>> make_model<double>(ModelKind, const nlohmann::json&,
                                                                     std::uint64_t);

}  // namespace stan
