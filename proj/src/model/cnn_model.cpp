#include "stan/model/cnn_model.hpp"

#include <cmath>
#include <stdexcept>

#include "stan/model/stan_model.hpp"

namespace stan {

std::string to_string(ModelKind kind) { return kind == ModelKind::Stan ? "stan" : "cnn"; }

ModelKind parse_model_kind(const std::string& name) {
  if (name == "stan") return ModelKind::Stan;
  if (name == "cnn") return ModelKind::Cnn;
  throw std::invalid_argument("unknown model kind '" + name + "' (expected stan|cnn)");
}

std::size_t CnnConfig::grid_cols() const {
  std::size_t cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(frames))));
  while (cols * cols < frames) ++cols;
  while (cols > 1 && (cols - 1) * (cols - 1) >= frames) --cols;
  return cols;
}

std::size_t CnnConfig::grid_rows() const {
  const std::size_t cols = grid_cols();
  return (frames + cols - 1) / cols;
}

void CnnConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("CnnConfig: " + what); };
  if (num_classes == 0) fail("num_classes must be positive");
  if (frames == 0) fail("frames must be positive");
  if (height == 0 || height % 8 != 0) fail("height (" + std::to_string(height) + ") must be a positive multiple of 8");
  if (width == 0 || width % 8 != 0) fail("width (" + std::to_string(width) + ") must be a positive multiple of 8");
  for (std::size_t c : encoder_channels)
    if (c == 0) fail("encoder channel widths must be positive");
  if (head_channels == 0 || hidden == 0) fail("head widths must be positive");
  if ((grid_rows() * tile_height()) % 2 != 0 || (grid_cols() * tile_width()) % 2 != 0) {
    fail("patched image extents must be even for 2x2 max pooling");
  }
}

nlohmann::json CnnConfig::to_json() const {
  return {{"num_classes", num_classes},         {"frames", frames},
          {"height", height},                   {"width", width},
          {"encoder_channels", encoder_channels}, {"head_channels", head_channels},
          {"hidden", hidden}};
}

CnnConfig CnnConfig::from_json(const nlohmann::json& j) {
  CnnConfig c;
  c.num_classes = j.value("num_classes", c.num_classes);
  c.frames = j.value("frames", c.frames);
  c.height = j.value("height", c.height);
  c.width = j.value("width", c.width);
  c.encoder_channels = j.value("encoder_channels", c.encoder_channels);
  c.head_channels = j.value("head_channels", c.head_channels);
  c.hidden = j.value("hidden", c.hidden);
  return c;
}

template <typename T>
CnnModel<T>::CnnModel(const CnnConfig& config, std::uint64_t seed) : config_(config), seed_(seed) {
  config_.validate();
  std::mt19937_64 rng(seed);
  std::size_t in = 3;
  for (std::size_t i = 0; i < 3; ++i) {
    const std::size_t out = config_.encoder_channels[i];
    const std::string p = "encoder" + std::to_string(i);
    enc_w_[i] = params_.add(p + ".weight", Shape{out, in, 1, 3, 3}, true);
    enc_b_[i] = params_.add(p + ".bias", Shape{out}, false);
    fill_fan_in_normal(enc_w_[i], in * 9, rng);
    in = out;
  }
  conv_w_ = params_.add("head.conv.weight", Shape{config_.head_channels, in, 1, 3, 3}, true);
  conv_b_ = params_.add("head.conv.bias", Shape{config_.head_channels}, false);
  fill_fan_in_normal(conv_w_, in * 9, rng);
  const std::size_t pooled = config_.head_channels * (config_.grid_rows() * config_.tile_height() / 2) *
                             (config_.grid_cols() * config_.tile_width() / 2);
  fc1_w_ = params_.add("head.fc1.weight", Shape{config_.hidden, pooled}, true);
  fc1_b_ = params_.add("head.fc1.bias", Shape{config_.hidden}, false);
  fill_fan_in_normal(fc1_w_, pooled, rng);
  fc2_w_ = params_.add("head.fc2.weight", Shape{config_.num_classes, config_.hidden}, true);
  fc2_b_ = params_.add("head.fc2.bias", Shape{config_.num_classes}, false);
  fill_fan_in_normal(fc2_w_, config_.hidden, rng);
}

template <typename T>
Shape CnnModel<T>::input_shape() const {
  return {3, config_.frames, config_.height, config_.width};
}

template <typename T>
Tensor<T> CnnModel<T>::encode(const Tensor<T>& clip) const {
  if (clip.shape() != input_shape()) {
    throw std::invalid_argument("CNN input " + to_string(clip.shape()) + " does not match configured " +
                                to_string(input_shape()));
  }
  Conv3dOptions opt;
  opt.stride = {1, 2, 2};
  opt.padding = {0, 1, 1};
  Tensor<T> x = clip;
  for (std::size_t i = 0; i < 3; ++i) x = relu(conv3d(x, enc_w_[i], enc_b_[i], opt));
  return x;
}

template <typename T>
Tensor<T> CnnModel<T>::patched_image(const Tensor<T>& clip) const {
  return tile_frames(encode(clip), config_.grid_rows(), config_.grid_cols());
}

template <typename T>
ForwardResult<T> CnnModel<T>::classify_plane(const Tensor<T>& plane) const {
  Conv3dOptions opt;
  opt.padding = {0, 1, 1};
  ForwardResult<T> r;
  r.cam_activation = relu(conv3d(plane, conv_w_, conv_b_, opt));
  auto pooled = max_pool3d(r.cam_activation, Triple{1, 2, 2});
  auto flat = reshape(pooled, Shape{pooled.numel()});
  r.logits = linear(relu(linear(flat, fc1_w_, fc1_b_)), fc2_w_, fc2_b_);
  return r;
}

template <typename T>
ForwardResult<T> CnnModel<T>::forward(const Tensor<T>& clip) {
  return classify_plane(patched_image(clip));
}

template <typename T>
Tensor<T> CnnModel<T>::expand_cam(const Tensor<T>& cam) const {
  const std::size_t h = config_.tile_height(), w = config_.tile_width();
  const std::size_t rows = config_.grid_rows(), cols = config_.grid_cols();
  const std::size_t pw = cols * w;
  if (cam.numel() != rows * h * pw) {
    throw std::invalid_argument("expand_cam: map " + to_string(cam.shape()) + " does not match the patched plane");
  }
  const std::size_t frames = config_.frames, height = config_.height, width = config_.width;
  const std::size_t plane = frames * height * width;
  std::vector<T> volume(3 * plane);
  std::vector<T> tile(h * w);
  for (std::size_t f = 0; f < frames; ++f) {
    const std::size_t r0 = (f / cols) * h, c0 = (f % cols) * w;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) tile[y * w + x] = cam[(r0 + y) * pw + c0 + x];
    auto up = trilinear_resize(tile, Triple{1, h, w}, Triple{1, height, width});
    for (std::size_t c = 0; c < 3; ++c)
      std::copy(up.begin(), up.end(), volume.begin() + c * plane + f * height * width);
  }
  return Tensor<T>(input_shape(), std::move(volume));
}

template <typename T>
Tensor<T> untile_frames(const Tensor<T>& plane, std::size_t frames, std::size_t rows, std::size_t cols) {
  if (plane.rank() != 4 || plane.dim(1) != 1 || plane.dim(2) % rows != 0 || plane.dim(3) % cols != 0 ||
      rows * cols < frames) {
    throw std::invalid_argument("untile_frames: plane " + to_string(plane.shape()) + " does not fit a " +
                                std::to_string(rows) + "x" + std::to_string(cols) + " grid of " +
                                std::to_string(frames) + " frames");
  }
  const std::size_t c = plane.dim(0), h = plane.dim(2) / rows, w = plane.dim(3) / cols, pw = plane.dim(3);
  Tensor<T> out(Shape{c, frames, h, w});
  std::size_t i = 0;
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t f = 0; f < frames; ++f) {
      const std::size_t r0 = (f / cols) * h, c0 = (f % cols) * w;
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x, ++i) out[i] = plane[(ci * plane.dim(2) + r0 + y) * pw + c0 + x];
    }
  return out;
}

template class CnnModel<float>;
template class CnnModel<double>;
template Tensor<float> untile_frames<float>(const Tensor<float>&, std::size_t, std::size_t, std::size_t);
template Tensor<double> untile_frames<double>(const Tensor<double>&, std::size_t, std::size_t, std::size_t);

}  // namespace stan
