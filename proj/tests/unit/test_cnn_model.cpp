#include <gtest/gtest.h>

#include "stan/model/cnn_model.hpp"
#include "test_util.hpp"

using namespace stan;
using stan::testing::grad_check;
using stan::testing::random_tensor;
using stan::testing::weighted_sum;

namespace {

CnnConfig small_config(std::size_t frames) {
  CnnConfig c;
  c.num_classes = 3;
  c.frames = frames;
  c.height = 16;
  c.width = 16;
  c.encoder_channels = {3, 3, 2};
  c.head_channels = 3;
  c.hidden = 5;
  return c;
}

std::size_t expected_parameters(const CnnConfig& c) {
  std::size_t n = 0, in = 3;
  for (auto out : c.encoder_channels) {
    n += out * in * 9 + out;
    in = out;
  }
  n += c.head_channels * in * 9 + c.head_channels;
  const std::size_t pooled =
      c.head_channels * (c.grid_rows() * c.tile_height() / 2) * (c.grid_cols() * c.tile_width() / 2);
  return n + c.hidden * pooled + c.hidden + c.num_classes * c.hidden + c.num_classes;
}

}  // namespace

TEST(CnnConfig, GridCoversFrames) {
  for (std::size_t t : {1u, 2u, 4u, 5u, 16u, 20u, 394u}) {
    CnnConfig c;
    c.frames = t;
    EXPECT_GE(c.grid_rows() * c.grid_cols(), t);
    EXPECT_LT((c.grid_rows() - 1) * c.grid_cols(), t);
  }
  CnnConfig c;
  c.frames = 20;
  EXPECT_EQ(c.grid_cols(), 5u);
  EXPECT_EQ(c.grid_rows(), 4u);
  EXPECT_EQ(CnnConfig::from_json(c.to_json()), c);
  c.height = 12;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(CnnModel, ShapesAndParameterCount) {
  CnnConfig c;
  CnnModel<float> m(c, 1);
  EXPECT_EQ(m.parameters().count(), expected_parameters(c));
  std::mt19937_64 rng(2);
  auto x = random_tensor<float>(m.input_shape(), rng, 0, 1);
  NoGradGuard g;
  EXPECT_EQ(m.encode(x).shape(), (Shape{4, 20, 4, 4}));
  EXPECT_EQ(m.patched_image(x).shape(), (Shape{4, 1, 16, 20}));
  auto r = m.forward(x);
  EXPECT_EQ(r.logits.shape(), (Shape{4}));
  EXPECT_EQ(r.cam_activation.shape(), (Shape{8, 1, 16, 20}));
  EXPECT_EQ(m.expand_cam(Tensor<float>(Shape{1, 16, 20})).shape(), m.input_shape());
}

TEST(CnnModel, FrameSwapSwapsTiles) {
  CnnModel<double> m(small_config(5), 3);
  std::mt19937_64 rng(4);
  auto x = random_tensor<double>(m.input_shape(), rng, 0, 1);
  auto y = x.clone();
  const std::size_t plane = 16 * 16;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < plane; ++i) std::swap(y[(c * 5 + 1) * plane + i], y[(c * 5 + 3) * plane + i]);
  auto cfg = small_config(5);
  auto a = untile_frames(m.patched_image(x), 5, cfg.grid_rows(), cfg.grid_cols());
  auto b = untile_frames(m.patched_image(y), 5, cfg.grid_rows(), cfg.grid_cols());
  const std::size_t tile = 2 * 2;
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t f = 0; f < 5; ++f) {
      const std::size_t g = f == 1 ? 3 : f == 3 ? 1 : f;
      for (std::size_t i = 0; i < tile; ++i) EXPECT_EQ(a[(c * 5 + f) * tile + i], b[(c * 5 + g) * tile + i]);
    }
}

TEST(CnnModel, UntileInvertsTile) {
  std::mt19937_64 rng(5);
  auto x = random_tensor<double>(Shape{2, 7, 3, 2}, rng);
  auto plane = tile_frames(x, 3, 3);
  EXPECT_EQ(untile_frames(plane, 7, 3, 3).values(), x.values());
  EXPECT_THROW(untile_frames(plane, 10, 3, 3), std::invalid_argument);
}

TEST(CnnModel, EncoderDoesNotMixFrames) {
  CnnModel<double> m(small_config(4), 6);
  std::mt19937_64 rng(7);
  auto x = random_tensor<double>(m.input_shape(), rng, 0, 1, true);
  auto enc = m.encode(x);
  // Gradient of frame 2's features reaches only frame 2 of the input.
  std::vector<double> seed(enc.numel(), 0.0);
  const std::size_t tile = enc.dim(2) * enc.dim(3);
  for (std::size_t c = 0; c < enc.dim(0); ++c)
    for (std::size_t i = 0; i < tile; ++i) seed[(c * 4 + 2) * tile + i] = 1.0;
  backward(enc, std::span<const double>(seed));
  const std::size_t plane = 16 * 16;
  double inside = 0;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t f = 0; f < 4; ++f)
      for (std::size_t i = 0; i < plane; ++i) {
        const double g = x.grad()[(c * 4 + f) * plane + i];
        if (f == 2) inside += std::abs(g);
        else EXPECT_EQ(g, 0.0);
      }
  EXPECT_GT(inside, 0.0);
}

TEST(CnnModel, TileMaskingOracle) {
  // Zeroing one frame changes exactly that tile of the patched image.
  CnnModel<double> m(small_config(4), 8);
  std::mt19937_64 rng(9);
  auto x = random_tensor<double>(m.input_shape(), rng, 0, 1);
  auto y = x.clone();
  const std::size_t plane = 16 * 16;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < plane; ++i) y[(c * 4 + 1) * plane + i] = 0.0;
  auto a = untile_frames(m.patched_image(x), 4, 2, 2);
  auto b = untile_frames(m.patched_image(y), 4, 2, 2);
  auto zero_frame = untile_frames(m.patched_image(Tensor<double>(m.input_shape(), 0.0)), 4, 2, 2);
  const std::size_t tile = 4;
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t f = 0; f < 4; ++f)
      for (std::size_t i = 0; i < tile; ++i) {
        const std::size_t k = (c * 4 + f) * tile + i;
        EXPECT_EQ(b[k], f == 1 ? zero_frame[k] : a[k]);
      }
}

TEST(CnnModel, ComposedGradientsDouble) {
  CnnModel<double> m(small_config(4), 10);
  stan::testing::randomize_parameters(m.parameters(), 10, 0.5);
  std::mt19937_64 rng(11);
  auto x = random_tensor<double>(m.input_shape(), rng, 0, 1);
  auto f = [&] { return weighted_sum(m.forward(x).logits); };
  EXPECT_LT(grad_check<double>(f, x, 12, 1e-4).max_relative_error, 1e-5);
  for (const char* name : {"encoder0.weight", "encoder2.bias", "head.conv.weight", "head.fc1.weight", "head.fc2.bias"}) {
    auto p = m.parameters().get(name);
    EXPECT_LT(grad_check<double>(f, p, 10, 1e-4).max_relative_error, 1e-5) << name;
  }
}
