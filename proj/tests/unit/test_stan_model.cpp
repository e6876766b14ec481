#include <gtest/gtest.h>

#include <cmath>

#include "stan/model/stan_model.hpp"
#include "test_util.hpp"

using namespace stan;
using stan::testing::grad_check;
using stan::testing::random_tensor;
using stan::testing::weighted_sum;

namespace {

// Independent count from the layer inventory.
std::size_t expected_parameters(const StanConfig& c) {
  std::size_t n = c.stage_channels[0] * 3 * 3 * 4 * 4 + c.stage_channels[0];
  for (std::size_t s = 0; s < 4; ++s) {
    const std::size_t ch = c.stage_channels[s];
    if (s > 0) n += ch * c.stage_channels[s - 1] * 4 + ch;
    const std::size_t hidden = c.ffn_hidden(ch);
    std::size_t block = ch * 27 + ch;  // dpe
    if (StanConfig::stage_kind[s] == StageKind::Local) {
      block += 2 * ch + (ch * ch + ch) + (ch * 125 + ch) + (ch * ch + ch);
    } else {
      block += 2 * ch + (3 * ch * ch + 3 * ch) + (ch * ch + ch);
    }
    block += 2 * ch + (hidden * ch + hidden) + (ch * hidden + ch);
    n += block * c.stage_blocks[s];
  }
  return n + c.num_classes * c.stage_channels[3] + c.num_classes;
}

template <typename T>
void zero(StanModel<T>& m, const std::string& name) {
  for (auto& v : m.parameters().get(name).data()) v = T(0);
}

StanConfig tiny_config() {
  StanConfig c = StanConfig::desk(3, 4, 32, 32);
  c.stage_channels = {2, 4, 8, 16};
  c.heads_per_stage = {1, 1, 2, 2};
  c.ffn_expansion = 2.0;
  return c;
}

}  // namespace

TEST(StanConfig, StageExtents) {
  auto paper = StanConfig::paper(400, 16, 224, 224);
  EXPECT_EQ(paper.stage_extents(0), (Triple{8, 56, 56}));
  EXPECT_EQ(paper.stage_extents(3), (Triple{8, 7, 7}));
  auto desk = StanConfig::desk(4, 16, 32, 32);
  EXPECT_EQ(desk.stage_extents(0), (Triple{8, 8, 8}));
  EXPECT_EQ(desk.stage_extents(3), (Triple{8, 1, 1}));
}

TEST(StanConfig, ValidationNamesConstraint) {
  auto c = StanConfig::desk(4, 16, 32, 32);
  c.frames = 15;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = StanConfig::desk(4, 16, 48, 32);
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = StanConfig::desk(4, 16, 32, 32);
  c.heads_per_stage[2] = 3;
  try {
    c.validate();
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("divisible"), std::string::npos);
  }
  c = StanConfig::desk(4, 16, 32, 32);
  EXPECT_EQ(StanConfig::from_json(c.to_json()), c);
}

TEST(StanModel, StageOutputShapesDesk) {
  StanModel<float> m(StanConfig::desk(4, 16, 64, 64), 1);
  NoGradGuard g;
  std::mt19937_64 rng(2);
  auto outs = m.stage_outputs(random_tensor<float>(Shape{3, 16, 64, 64}, rng, 0, 1));
  ASSERT_EQ(outs.size(), 4u);
  EXPECT_EQ(outs[0].shape(), (Shape{16, 8, 16, 16}));
  EXPECT_EQ(outs[1].shape(), (Shape{32, 8, 8, 8}));
  EXPECT_EQ(outs[2].shape(), (Shape{64, 8, 4, 4}));
  EXPECT_EQ(outs[3].shape(), (Shape{128, 8, 2, 2}));
  EXPECT_EQ(m.forward(random_tensor<float>(Shape{3, 16, 64, 64}, rng)).logits.shape(), (Shape{4}));
  EXPECT_THROW(m.forward(Tensor<float>(Shape{3, 16, 32, 32})), std::invalid_argument);
}

TEST(StanModel, ParameterCountMatchesInventory) {
  auto desk = StanConfig::desk(4, 20, 32, 32);
  StanModel<float> m(desk, 0);
  EXPECT_EQ(m.parameters().count(), expected_parameters(desk));
  EXPECT_EQ(StanModel<float>::parameter_count(desk), expected_parameters(desk));
  auto tiny = tiny_config();
  EXPECT_EQ(StanModel<double>(tiny, 0).parameters().count(), expected_parameters(tiny));
}

TEST(StanModel, SeedDeterminesWeights) {
  auto c = StanConfig::desk(4, 4, 32, 32);
  EXPECT_EQ(StanModel<float>(c, 5).parameters().checksum(), StanModel<float>(c, 5).parameters().checksum());
  EXPECT_NE(StanModel<float>(c, 5).parameters().checksum(), StanModel<float>(c, 6).parameters().checksum());
}

TEST(StanModel, ZeroedBranchesAreIdentity) {
  StanModel<double> m(tiny_config(), 3);
  std::mt19937_64 rng(4);
  auto local = random_tensor<double>(Shape{2, 2, 8, 8}, rng);
  auto global = random_tensor<double>(Shape{8, 2, 2, 2}, rng);
  zero(m, "stage0.block0.dpe.weight");
  zero(m, "stage0.block0.dpe.bias");
  zero(m, "stage0.block0.mhra.proj.weight");
  zero(m, "stage0.block0.mhra.proj.bias");
  zero(m, "stage0.block0.ffn.fc2.weight");
  zero(m, "stage0.block0.ffn.fc2.bias");
  zero(m, "stage2.block0.mhra.proj.weight");
  zero(m, "stage2.block0.mhra.proj.bias");
  EXPECT_EQ(m.dpe(0, 0, local).values(), local.values());
  EXPECT_EQ(m.mhra_local(0, 0, local).values(), local.values());
  EXPECT_EQ(m.ffn(0, 0, local).values(), local.values());
  EXPECT_EQ(m.block(0, 0, local).values(), local.values());
  EXPECT_EQ(m.mhra_global(2, 0, global).values(), global.values());
}

TEST(StanModel, TwoTokenAttentionOracle) {
  std::mt19937_64 rng(5);
  const std::size_t C = 4, heads = 2, d = 2;
  auto rows = random_tensor<double>(Shape{2, C}, rng);
  auto qkv_w = random_tensor<double>(Shape{3 * C, C}, rng);
  auto qkv_b = random_tensor<double>(Shape{3 * C}, rng);
  auto proj_w = random_tensor<double>(Shape{C, C}, rng);
  auto proj_b = random_tensor<double>(Shape{C}, rng);
  Tensor<double> attn;
  auto out = multi_head_attention(rows, qkv_w, qkv_b, proj_w, proj_b, heads, &attn);

  double qkv[2][3 * C];
  for (int n = 0; n < 2; ++n)
    for (std::size_t o = 0; o < 3 * C; ++o) {
      qkv[n][o] = qkv_b[o];
      for (std::size_t i = 0; i < C; ++i) qkv[n][o] += qkv_w[o * C + i] * rows[n * C + i];
    }
  double mixed[2][C];
  for (std::size_t h = 0; h < heads; ++h)
    for (int n = 0; n < 2; ++n) {
      double s[2];
      for (int m = 0; m < 2; ++m) {
        s[m] = 0;
        for (std::size_t k = 0; k < d; ++k) s[m] += qkv[n][h * d + k] * qkv[m][C + h * d + k];
        s[m] /= std::sqrt(static_cast<double>(d));
      }
      const double p0 = 1.0 / (1.0 + std::exp(s[1] - s[0]));
      const double p[2] = {p0, 1.0 - p0};
      EXPECT_NEAR(attn[(h * 2 + n) * 2 + 0], p0, 1e-12);
      for (std::size_t k = 0; k < d; ++k)
        mixed[n][h * d + k] = p[0] * qkv[0][2 * C + h * d + k] + p[1] * qkv[1][2 * C + h * d + k];
    }
  for (int n = 0; n < 2; ++n)
    for (std::size_t o = 0; o < C; ++o) {
      double ref = proj_b[o];
      for (std::size_t i = 0; i < C; ++i) ref += proj_w[o * C + i] * mixed[n][i];
      EXPECT_NEAR(out[n * C + o], ref, 1e-12);
    }
  EXPECT_THROW(multi_head_attention(rows, qkv_w, qkv_b, proj_w, proj_b, 3), std::invalid_argument);
}

TEST(StanModel, FfnByHand) {
  StanModel<double> m(tiny_config(), 6);
  // channels 2 -> hidden 4 -> 2 on a single token.
  auto fc1_w = m.parameters().get("stage0.block0.ffn.fc1.weight");
  auto fc1_b = m.parameters().get("stage0.block0.ffn.fc1.bias");
  auto fc2_w = m.parameters().get("stage0.block0.ffn.fc2.weight");
  auto fc2_b = m.parameters().get("stage0.block0.ffn.fc2.bias");
  ASSERT_EQ(fc1_w.shape(), (Shape{4, 2}));
  const double w1[8] = {0.5, -1.0, 1.5, 0.25, -0.75, 2.0, 1.0, 1.0};
  const double w2[8] = {1.0, 0.0, -0.5, 0.25, 0.5, 1.0, -1.0, 0.75};
  for (int i = 0; i < 8; ++i) {
    fc1_w[i] = w1[i];
    fc2_w[i] = w2[i];
  }
  for (int i = 0; i < 4; ++i) fc1_b[i] = 0.1 * i;
  fc2_b[0] = -0.2;
  fc2_b[1] = 0.3;
  Tensor<double> x(Shape{2, 1, 1, 1}, std::vector<double>{0.7, -0.4});
  auto y = m.ffn(0, 0, x);
  // Layer norm of (0.7, -0.4): mean 0.15, deviation 0.55.
  const double sd = std::sqrt(0.55 * 0.55 + 1e-5);
  const double z[2] = {0.55 / sd, -0.55 / sd};
  double h[4];
  for (int j = 0; j < 4; ++j) {
    const double a = w1[j * 2] * z[0] + w1[j * 2 + 1] * z[1] + 0.1 * j;
    h[j] = 0.5 * a * (1.0 + std::erf(a / std::sqrt(2.0)));
  }
  for (int o = 0; o < 2; ++o) {
    double r = (o == 0 ? -0.2 : 0.3);
    for (int j = 0; j < 4; ++j) r += w2[o * 4 + j] * h[j];
    EXPECT_NEAR(y[o], x[o] + r, 1e-12);
  }
}

TEST(StanModel, AttentionRowsAreDistributions) {
  StanModel<double> m(tiny_config(), 7);
  std::mt19937_64 rng(8);
  auto g = random_tensor<double>(Shape{8, 2, 2, 2}, rng);
  Tensor<double> attn;
  m.mhra_global(2, 0, g, &attn);
  ASSERT_EQ(attn.shape(), (Shape{2, 8, 8}));
  for (std::size_t r = 0; r < 16; ++r) {
    double s = 0;
    for (std::size_t k = 0; k < 8; ++k) s += attn[r * 8 + k];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(StanModel, ComposedGradientsDouble) {
  StanModel<double> m(tiny_config(), 9);
  stan::testing::randomize_parameters(m.parameters(), 9, 0.5);
  m.set_training(true);
  std::mt19937_64 rng(10);
  auto x = random_tensor<double>(Shape{3, 4, 32, 32}, rng, 0, 1);
  auto f = [&] { return weighted_sum(m.forward(x).logits); };
  EXPECT_LT(grad_check<double>(f, x, 12, 1e-3).max_relative_error, 1e-5);
  for (const char* name : {"stem.weight", "stage0.block0.mhra.affinity.weight", "stage2.block0.mhra.qkv.weight",
                           "stage3.block0.ffn.fc1.weight", "head.bias"}) {
    auto p = m.parameters().get(name);
    EXPECT_LT(grad_check<double>(f, p, 10, 1e-3).max_relative_error, 1e-5) << name;
  }
}

TEST(StanModel, FloatGradientsTrackDouble) {
  auto cfg = StanConfig::desk(4, 4, 32, 32);
  StanModel<float> mf(cfg, 11);
  StanModel<double> md(cfg, 11);
  stan::testing::randomize_parameters(mf.parameters(), 11, 0.2);
  auto& ef = mf.parameters().entries();
  auto& ed = md.parameters().entries();
  for (std::size_t i = 0; i < ef.size(); ++i)
    for (std::size_t k = 0; k < ef[i].tensor.numel(); ++k) ed[i].tensor[k] = ef[i].tensor[k];
  std::mt19937_64 rng(12);
  auto xf = random_tensor<float>(Shape{3, 4, 32, 32}, rng, 0, 1, true);
  Tensor<double> xd(xf.shape(), std::vector<double>(xf.values().begin(), xf.values().end()), true);
  backward(cross_entropy(mf.forward(xf).logits, {1}));
  backward(cross_entropy(md.forward(xd).logits, {1}));
  double worst = 0, peak = 0;
  for (std::size_t i = 0; i < xd.numel(); ++i) peak = std::max(peak, std::abs(xd.grad()[i]));
  for (std::size_t i = 0; i < xd.numel(); ++i)
    worst = std::max(worst, std::abs(xf.grad()[i] - xd.grad()[i]) / peak);
  EXPECT_LT(worst, 1e-3);
}

TEST(StanModel, ExpandCamResizesFinalGrid) {
  StanModel<float> m(StanConfig::desk(4, 4, 32, 32), 1);
  Tensor<float> cam(Shape{2, 1, 1}, 0.5f);
  auto v = m.expand_cam(cam);
  EXPECT_EQ(v.shape(), (Shape{3, 4, 32, 32}));
  for (float x : v.values()) EXPECT_FLOAT_EQ(x, 0.5f);
  EXPECT_THROW(m.expand_cam(Tensor<float>(Shape{3, 1, 1})), std::invalid_argument);
}

TEST(Trilinear, IdentityAndInterpolation) {
  std::vector<double> v{1, 2, 3, 4};
  EXPECT_EQ(trilinear_resize(v, Triple{1, 2, 2}, Triple{1, 2, 2}), v);
  auto up = trilinear_resize(std::vector<double>{0, 1}, Triple{1, 1, 2}, Triple{1, 1, 4});
  // half-pixel centres: -0.25, 0.25, 0.75, 1.25 in source space, clamped.
  EXPECT_DOUBLE_EQ(up[0], 0.0);
  EXPECT_DOUBLE_EQ(up[1], 0.25);
  EXPECT_DOUBLE_EQ(up[2], 0.75);
  EXPECT_DOUBLE_EQ(up[3], 1.0);
}
