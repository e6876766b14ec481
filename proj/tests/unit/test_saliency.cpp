#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "stan/model/cnn_model.hpp"
#include "stan/model/stan_model.hpp"
#include "stan/saliency.hpp"
#include "test_util.hpp"

using namespace stan;
using stan::testing::random_tensor;

namespace {

StanModel<double> small_stan(std::uint64_t seed) {
  StanModel<double> m(StanConfig::desk(3, 4, 32, 32), seed);
  stan::testing::randomize_parameters(m.parameters(), seed, 0.2);
  return m;
}

double oracle_f1(const std::vector<LabeledSeries>& set, double theta) {
  double tp = 0, fp = 0, fn = 0;
  for (const auto& s : set)
    for (std::size_t i = 0; i < s.labels.size(); ++i) {
      const bool p = s.series.scores[i] > theta;
      tp += p && s.labels[i];
      fp += p && !s.labels[i];
      fn += !p && s.labels[i];
    }
  return tp == 0 ? 0.0 : 2 * tp / (2 * tp + fp + fn);
}

}  // namespace

TEST(Saliency, VanillaMatchesFiniteDifferences) {
  auto m = small_stan(1);
  std::mt19937_64 rng(2);
  auto x = random_tensor<double>(m.input_shape(), rng, 0, 1);
  auto v = vanilla_grad<double>(m, x, 1);
  EXPECT_EQ(v.values.shape(), x.shape());
  std::uniform_int_distribution<std::size_t> pick_index(0, x.numel() - 1);
  NoGradGuard g;
  for (int k = 0; k < 10; ++k) {
    const std::size_t i = pick_index(rng);
    auto up = x.clone(), down = x.clone();
    up[i] += 1e-4;
    down[i] -= 1e-4;
    const double numeric = (m.forward(up).logits[1] - m.forward(down).logits[1]) / 2e-4;
    EXPECT_LT(stan::testing::relative_error(v.values[i], numeric), 1e-3);
  }
}

TEST(Saliency, ConstantModelGivesZeroVolume) {
  auto m = small_stan(3);
  for (const char* n : {"head.weight"})
    for (auto& w : m.parameters().get(n).data()) w = 0.0;
  std::mt19937_64 rng(4);
  auto v = vanilla_grad<double>(m, random_tensor<double>(m.input_shape(), rng, 0, 1), 0);
  for (double x : v.values.values()) EXPECT_EQ(x, 0.0);
}

TEST(Saliency, ExplanationsLeaveModelUntouched) {
  auto m = small_stan(5);
  m.set_training(true);
  const auto before = m.parameters().checksum();
  std::mt19937_64 rng(6);
  auto x = random_tensor<double>(m.input_shape(), rng, 0, 1);
  vanilla_grad<double>(m, x, 0);
  smoothgrad<double>(m, x, 1, 2, 0.1, 7);
  gradcam<double>(m, x, 2);
  EXPECT_EQ(m.parameters().checksum(), before);
  EXPECT_TRUE(m.training());
  for (const auto& p : m.parameters().entries()) {
    EXPECT_TRUE(p.tensor.requires_grad());
    EXPECT_FALSE(p.tensor.has_grad());
  }
  EXPECT_THROW(vanilla_grad<double>(m, x, 3), std::invalid_argument);
}

TEST(Saliency, SmoothGradDegenerateCaseIsVanilla) {
  auto m = small_stan(8);
  std::mt19937_64 rng(9);
  auto x = random_tensor<double>(m.input_shape(), rng, 0, 1);
  EXPECT_EQ(smoothgrad<double>(m, x, 2, 1, 0.0, 123).values.values(), vanilla_grad<double>(m, x, 2).values.values());
  EXPECT_THROW(smoothgrad<double>(m, x, 2, 0, 0.1, 1), std::invalid_argument);
  EXPECT_THROW(smoothgrad<double>(m, x, 2, 1, -0.1, 1), std::invalid_argument);
}

TEST(Saliency, SmoothGradIsMeanOfNoisyGradients) {
  auto m = small_stan(10);
  std::mt19937_64 rng(11);
  auto x = random_tensor<double>(m.input_shape(), rng, 0, 1);
  auto sg = smoothgrad<double>(m, x, 0, 4, 0.2, 77);
  std::vector<double> mean(x.numel(), 0.0);
  for (std::size_t i = 0; i < 4; ++i) {
    auto noisy = smoothgrad_input(x, 0.2, 77, i);
    auto g = vanilla_grad<double>(m, noisy, 0);
    for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += g.values[k] / 4.0;
  }
  for (std::size_t k = 0; k < mean.size(); ++k) EXPECT_NEAR(sg.values[k], mean[k], 1e-6);
  EXPECT_EQ(smoothgrad<double>(m, x, 0, 4, 0.2, 77).values.values(), sg.values.values());
  EXPECT_NE(smoothgrad<double>(m, x, 0, 4, 0.2, 78).values.values(), sg.values.values());
}

TEST(Saliency, SmoothGradNoiseScalesWithRange) {
  Tensor<double> x(Shape{1, 2000}, 0.0);
  for (std::size_t i = 0; i < 1000; ++i) x[i] = 2.0;  // range 2
  auto n = smoothgrad_input(x, 0.1, 5, 0);
  double s = 0, s2 = 0;
  for (std::size_t i = 0; i < 2000; ++i) {
    const double e = n[i] - x[i];
    s += e;
    s2 += e * e;
  }
  const double sd = std::sqrt(s2 / 2000 - (s / 2000) * (s / 2000));
  EXPECT_NEAR(sd, 0.2, 0.02);
}

TEST(Saliency, GradCamHandArithmetic) {
  // One channel on a 1x2x2 grid.
  Tensor<double> a(Shape{1, 1, 2, 2}, std::vector<double>{1.0, -2.0, 3.0, 0.5});
  std::vector<double> g{0.2, 0.4, -0.1, 0.3};  // mean 0.2
  auto cam = gradcam_map(a, std::span<const double>(g));
  ASSERT_EQ(cam.shape(), (Shape{1, 2, 2}));
  EXPECT_DOUBLE_EQ(cam[0], 0.2);
  EXPECT_DOUBLE_EQ(cam[1], 0.0);
  EXPECT_DOUBLE_EQ(cam[2], 0.6000000000000001);
  EXPECT_DOUBLE_EQ(cam[3], 0.1);
  // Two channels with opposite weights.
  Tensor<double> a2(Shape{2, 1, 1, 2}, std::vector<double>{1.0, 2.0, 3.0, 1.0});
  std::vector<double> g2{1.0, 1.0, -0.5, -0.5};
  auto cam2 = gradcam_map(a2, std::span<const double>(g2));
  EXPECT_DOUBLE_EQ(cam2[0], 0.0);  // 1 - 1.5 < 0
  EXPECT_DOUBLE_EQ(cam2[1], 1.5);  // 2 - 0.5
}

TEST(Saliency, GradCamIsNonNegativeAndShaped) {
  auto m = small_stan(12);
  std::mt19937_64 rng(13);
  for (int k = 0; k < 3; ++k) {
    auto x = random_tensor<double>(m.input_shape(), rng, 0, 1);
    auto v = gradcam<double>(m, x, k % 3);
    EXPECT_EQ(v.values.shape(), x.shape());
    for (double e : v.values.values()) EXPECT_GE(e, 0.0);
  }
  CnnConfig c;
  c.frames = 4;
  CnnModel<double> cnn(c, 1);
  auto v = gradcam<double>(cnn, random_tensor<double>(cnn.input_shape(), rng, 0, 1), 1);
  for (double e : v.values.values()) EXPECT_GE(e, 0.0);
}

TEST(FrameScores, Examples) {
  Tensor<double> two(Shape{1, 2, 1, 2}, std::vector<double>{2, 2, 0, 0});
  EXPECT_EQ(normalize_scores(raw_frame_scores(two)).scores, (std::vector<double>{1.0, 0.0}));
  Tensor<double> flat(Shape{3, 4, 2, 2}, -1.5);
  EXPECT_EQ(normalize_scores(raw_frame_scores(flat)).scores, std::vector<double>(4, 0.5));
  std::mt19937_64 rng(14);
  auto v = random_tensor<double>(Shape{3, 4, 2, 2}, rng, -3, 3);
  std::vector<double> raw(4, 0.0);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t t = 0; t < 4; ++t)
      for (std::size_t i = 0; i < 4; ++i) raw[t] += std::abs(v[(c * 4 + t) * 4 + i]) / 12.0;
  const double lo = *std::min_element(raw.begin(), raw.end()), hi = *std::max_element(raw.begin(), raw.end());
  auto s = normalize_scores(raw_frame_scores(v)).scores;
  for (std::size_t t = 0; t < 4; ++t) EXPECT_NEAR(s[t], (raw[t] - lo) / (hi - lo), 1e-9);
  v[3] = std::nan("");
  EXPECT_THROW(raw_frame_scores(v), std::invalid_argument);
}

TEST(FrameScores, ScaleInvarianceAndPermutation) {
  std::mt19937_64 rng(15);
  auto v = random_tensor<double>(Shape{3, 5, 2, 3}, rng, -1, 1);
  SaliencyVolume<double> a{v};
  SaliencyVolume<double> b{scale(v, 7.25)};
  auto sa = frame_scores(a).scores, sb = frame_scores(b).scores;
  for (std::size_t t = 0; t < 5; ++t) EXPECT_NEAR(sa[t], sb[t], 1e-12);
  EXPECT_EQ(classify_frames(frame_scores(a), 0.4), classify_frames(frame_scores(b), 0.4));
  // Reversing frames reverses raw scores.
  auto r = v.clone();
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t t = 0; t < 5; ++t)
      for (std::size_t i = 0; i < 6; ++i) r[(c * 5 + t) * 6 + i] = v[(c * 5 + (4 - t)) * 6 + i];
  auto ra = raw_frame_scores(v), rb = raw_frame_scores(r);
  for (std::size_t t = 0; t < 5; ++t) EXPECT_EQ(ra[t], rb[4 - t]);
}

TEST(Threshold, TieBreakAndAllPositive) {
  std::vector<LabeledSeries> set{{{{0.0, 1.0}, {}}, {0, 1}}};
  auto m = calibrate_threshold(set);
  EXPECT_EQ(m.threshold, 0.0);
  EXPECT_EQ(m.metric, 1.0);
  std::vector<LabeledSeries> all{{{{0.0, 0.4, 1.0}, {}}, {1, 1, 1}}};
  EXPECT_EQ(calibrate_threshold(all).threshold, 0.0);
  // F1 flat between 0.30 and 0.59 -> smallest.
  std::vector<LabeledSeries> plateau{{{{0.0, 0.3, 0.6, 1.0}, {}}, {0, 0, 1, 1}}};
  auto p = calibrate_threshold(plateau);
  EXPECT_DOUBLE_EQ(p.threshold, 0.3);
  EXPECT_THROW(calibrate_threshold(set, 0.0), std::invalid_argument);
}

TEST(Threshold, MatchesExhaustiveOracle) {
  std::mt19937_64 rng(16);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<LabeledSeries> set;
    for (int v = 0; v < 5; ++v) {
      LabeledSeries s;
      for (int t = 0; t < 10; ++t) {
        s.series.scores.push_back(std::round(u(rng) * 100) / 100);
        s.labels.push_back(u(rng) < 0.4);
      }
      set.push_back(s);
    }
    double best = -1, best_theta = 0;
    for (int k = 0; k <= 100; ++k) {
      const double f = oracle_f1(set, k / 100.0);
      if (f > best) best = f, best_theta = k / 100.0;
    }
    auto m = calibrate_threshold(set);
    EXPECT_EQ(m.threshold, best_theta);
    EXPECT_DOUBLE_EQ(m.metric, best);
    for (int k = 0; k <= 100; ++k) EXPECT_GE(pooled_frame_f1(set, m.threshold), oracle_f1(set, k / 100.0));
  }
}

TEST(Threshold, ClassifyFrames) {
  FrameScoreSeries s{{0.0, 0.3, 0.7, 1.0}, {}};
  EXPECT_EQ(classify_frames(s, 0.5), (std::vector<std::uint8_t>{0, 0, 1, 1}));
  EXPECT_EQ(classify_frames(s, 1.0), (std::vector<std::uint8_t>{0, 0, 0, 0}));
  EXPECT_EQ(classify_frames(s, 0.0), (std::vector<std::uint8_t>{0, 1, 1, 1}));
}

TEST(Extend, Examples) {
  FrameScoreSeries s{{0.0, 1.0}, {0, 10}};
  auto e = extend_to_long(s, 11);
  ASSERT_EQ(e.scores.size(), 11u);
  for (std::size_t j = 0; j < 11; ++j) EXPECT_EQ(e.scores[j], j <= 5 ? 0.0 : 1.0) << j;
  FrameScoreSeries id{{0.2, 0.9, 0.4}, {0, 1, 2}};
  EXPECT_EQ(extend_to_long(id, 3).scores, id.scores);
  EXPECT_THROW(extend_to_long(FrameScoreSeries{{0.1, 0.2}, {3, 1}}, 5), std::invalid_argument);
  EXPECT_THROW(extend_to_long(FrameScoreSeries{{0.1, 0.2}, {0, 5}}, 5), std::invalid_argument);
}

TEST(Extend, MatchesBruteForce) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t L = 2 + rng() % 200;
    const std::size_t k = 1 + rng() % std::min<std::size_t>(L, 25);
    std::vector<std::size_t> idx(L);
    for (std::size_t i = 0; i < L; ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    FrameScoreSeries s;
    s.sampled_indices = idx;
    for (std::size_t i = 0; i < k; ++i) s.scores.push_back(static_cast<double>(rng() % 1000) / 999.0);
    auto e = extend_to_long(s, L);
    for (std::size_t j = 0; j < L; ++j) {
      std::size_t best = 0;
      for (std::size_t i = 1; i < k; ++i) {
        const auto d = [&](std::size_t a) { return a > j ? a - j : j - a; };
        if (d(idx[i]) < d(idx[best])) best = i;
      }
      EXPECT_EQ(e.scores[j], s.scores[best]);
    }
  }
}

TEST(Saliency, CnnFrameScoresAreFullLength) {
  CnnConfig c;
  c.frames = 6;
  CnnModel<float> cnn(c, 3);
  std::mt19937_64 rng(18);
  auto s = frame_scores_cnn<float>(cnn, random_tensor<float>(cnn.input_shape(), rng, 0, 1), 0);
  EXPECT_EQ(s.scores.size(), 6u);
  EXPECT_TRUE(s.sampled_indices.empty());
  StanModel<float> stan(StanConfig::desk(4, 4, 32, 32), 1);
  EXPECT_THROW(frame_scores_cnn<float>(stan, Tensor<float>(stan.input_shape()), 0), std::invalid_argument);
}

TEST(Saliency, MethodNames) {
  for (auto m : {SaliencyMethod::Vanilla, SaliencyMethod::SmoothGrad, SaliencyMethod::GradCam})
    EXPECT_EQ(parse_method(to_string(m)), m);
  EXPECT_ANY_THROW(parse_method("lime"));
}
