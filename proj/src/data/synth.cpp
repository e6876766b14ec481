#include "stan/data/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include "stan/data/clip_io.hpp"

namespace stan {

namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Uniform integer in [lo, hi] without relying on distribution internals.
std::size_t uniform_index(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng() % (hi - lo + 1));
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

struct Point {
  double x, y;  // fractions of width and height
};

Point active_position(std::size_t label, double p) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  const double wave = 0.25 * std::sin(two_pi * 2.0 * p);
  switch (label) {
    case 0: return {0.5, 0.70 + 0.20 * p};   // drop toward the floor
    case 1: return {0.5 + wave, 0.15};       // sway along the top
    case 2: return {0.15, 0.5 + wave};       // vertical swing on the left
    case 3: return {0.85, 0.75 - 0.50 * p};  // rise along the right side
    case 4: return {0.5 + wave, 0.85};       // sway along the bottom
    default: return {0.15 + 0.2 * p, 0.15 + 0.2 * p};
  }
}

}  // namespace

SynthConfig SynthConfig::short_preset() { return SynthConfig{}; }

SynthConfig SynthConfig::long_preset() {
  SynthConfig c;
  c.frames = 394;
  return c;
}

std::size_t SynthConfig::min_window() const {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(window_min * static_cast<double>(frames) - 1e-9)));
}

std::size_t SynthConfig::max_window() const {
  return static_cast<std::size_t>(std::floor(window_max * static_cast<double>(frames) + 1e-9));
}

void SynthConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("SynthConfig: " + what); };
  if (num_classes < 2 || num_classes > kMaxClasses) fail("num_classes must be in [2, 6]");
  if (clips_per_class == 0) fail("clips_per_class must be positive");
  if (frames == 0 || height == 0 || width == 0) fail("frames, height and width must be positive");
  if (sprite_size == 0 || sprite_size * 4 > std::min(height, width)) fail("sprite_size must be in [1, min(H,W)/4]");
  if (!(clutter_density >= 0.0 && clutter_density <= 1.0)) fail("clutter_density must be in [0,1]");
  if (!(noise_sigma >= 0.0)) fail("noise_sigma must be >= 0");
  if (!(window_min > 0.0 && window_min <= window_max)) fail("window fractions need 0 < min <= max");
  if (window_max > 1.0) fail("active window longer than the clip");
  if (min_window() > max_window()) fail("window fraction range admits no integer length");
  if (groups == 0) fail("groups must be positive");
}

nlohmann::json SynthConfig::to_json() const {
  return {{"num_classes", num_classes},   {"clips_per_class", clips_per_class},
          {"frames", frames},             {"height", height},
          {"width", width},               {"sprite_size", sprite_size},
          {"clutter_density", clutter_density}, {"noise_sigma", noise_sigma},
          {"window_min", window_min},     {"window_max", window_max},
          {"groups", groups},             {"seed", seed}};
}

SynthConfig SynthConfig::from_json(const nlohmann::json& j) {
  SynthConfig c;
  if (j.contains("preset")) {
    const auto preset = j.at("preset").get<std::string>();
    if (preset == "long") c = long_preset();
    else if (preset != "short") throw std::invalid_argument("SynthConfig: unknown preset '" + preset + "'");
  }
  for (const auto& [key, value] : j.items()) {
    if (key == "preset") continue;
    if (key == "num_classes") c.num_classes = value.get<std::size_t>();
    else if (key == "clips_per_class") c.clips_per_class = value.get<std::size_t>();
    else if (key == "frames") c.frames = value.get<std::size_t>();
    else if (key == "height") c.height = value.get<std::size_t>();
    else if (key == "width") c.width = value.get<std::size_t>();
    else if (key == "sprite_size") c.sprite_size = value.get<std::size_t>();
    else if (key == "clutter_density") c.clutter_density = value.get<double>();
    else if (key == "noise_sigma") c.noise_sigma = value.get<double>();
    else if (key == "window_min") c.window_min = value.get<double>();
    else if (key == "window_max") c.window_max = value.get<double>();
    else if (key == "groups") c.groups = value.get<std::size_t>();
    else if (key == "seed") c.seed = value.get<std::uint64_t>();
    else throw std::invalid_argument("SynthConfig: unknown key '" + key + "'");
  }
  return c;
}

SyntheticClip synth_clip(const SynthConfig& cfg, std::size_t index) {
  cfg.validate();
  if (index >= cfg.clip_count()) throw std::invalid_argument("synth_clip: index out of range");
  std::mt19937_64 rng(mix(cfg.seed) ^ mix(index + 1));
  const std::size_t T = cfg.frames, H = cfg.height, W = cfg.width, S = cfg.sprite_size;
  const std::size_t plane = H * W, frame_stride = T * plane;

  SyntheticClip clip;
  clip.label = index % cfg.num_classes;
  clip.group = index % cfg.groups;
  clip.window_length = uniform_index(rng, cfg.min_window(), cfg.max_window());
  clip.window_start = uniform_index(rng, 0, T - clip.window_length);
  clip.important.assign(T, 0);
  for (std::size_t t = clip.window_start; t < clip.window_start + clip.window_length; ++t) clip.important[t] = 1;

  // Static background: flat gray plus gray rectangles.
  std::vector<float> background(plane, static_cast<float>(0.2 + 0.2 * uniform01(rng)));
  const auto rects = static_cast<std::size_t>(std::lround(cfg.clutter_density * static_cast<double>(plane) / 16.0));
  for (std::size_t r = 0; r < rects; ++r) {
    const std::size_t rw = uniform_index(rng, 2, 6), rh = uniform_index(rng, 2, 6);
    const std::size_t x0 = uniform_index(rng, 0, W - rw), y0 = uniform_index(rng, 0, H - rh);
    const auto level = static_cast<float>(0.3 + 0.4 * uniform01(rng));
    for (std::size_t y = y0; y < y0 + rh; ++y)
      for (std::size_t x = x0; x < x0 + rw; ++x) background[y * W + x] = level;
  }

  const double phase_x = 2.0 * std::numbers::pi * uniform01(rng);
  const double phase_y = 2.0 * std::numbers::pi * uniform01(rng);
  const double speed = 0.3 + 0.4 * uniform01(rng);

  std::vector<float> pixels(3 * frame_stride);
  std::normal_distribution<double> noise(0.0, 1.0);
  const std::size_t last = clip.window_length > 1 ? clip.window_length - 1 : 1;
  clip.keypoints.frames.resize(T);
  for (std::size_t t = 0; t < T; ++t) {
    Point p;
    if (clip.important[t]) {
      p = active_position(clip.label, static_cast<double>(t - clip.window_start) / static_cast<double>(last));
    } else {
      const double a = speed * static_cast<double>(t);
      p = {0.5 + 0.08 * std::sin(a + phase_x), 0.5 + 0.08 * std::sin(0.7 * a + phase_y)};
    }
    // Top-left pixel of the sprite, kept inside the frame.
    const double half = 0.5 * static_cast<double>(S - 1);
    const auto clamp_pos = [&](double centre, std::size_t extent) {
      const double v = std::round(centre * static_cast<double>(extent) - 0.5 - half);
      return static_cast<std::size_t>(std::clamp(v, 0.0, static_cast<double>(extent - S)));
    };
    const std::size_t x0 = clamp_pos(p.x, W), y0 = clamp_pos(p.y, H);
    clip.keypoints.frames[t] = {Joint{0, static_cast<double>(x0) + half, static_cast<double>(y0) + half, 1.0}};

    for (std::size_t c = 0; c < 3; ++c) {
      float* out = &pixels[c * frame_stride + t * plane];
      std::copy(background.begin(), background.end(), out);
      const float sprite = c == 0 ? 0.95f : 0.1f;
      for (std::size_t y = y0; y < y0 + S; ++y)
        for (std::size_t x = x0; x < x0 + S; ++x) out[y * W + x] = sprite;
    }
  }
  if (cfg.noise_sigma > 0.0) {
    for (auto& v : pixels) {
      v = static_cast<float>(std::clamp(static_cast<double>(v) + cfg.noise_sigma * noise(rng), 0.0, 1.0));
    }
  }
  clip.pixels = Tensor<float>(Shape{3, T, H, W}, std::move(pixels));
  return clip;
}

DatasetManifest generate(const SynthConfig& config, const std::filesystem::path& out_dir) {
  config.validate();
  DatasetManifest m;
  m.dataset_id = "synth-" + std::to_string(config.seed) + "-" + std::to_string(config.frames);
  m.num_classes = config.num_classes;
  m.height = config.height;
  m.width = config.width;
  m.generator = config.to_json();
  std::filesystem::create_directories(out_dir / "clips");
  char id[32];
  for (std::size_t i = 0; i < config.clip_count(); ++i) {
    auto clip = synth_clip(config, i);
    std::snprintf(id, sizeof id, "clip_%04zu", i);
    ClipEntry e;
    e.id = id;
    e.path = "clips/" + e.id + ".stnv";
    e.label = clip.label;
    e.group = clip.group;
    e.frames = config.frames;
    e.important = clip.important;
    e.keypoints = clip.keypoints;
    write_clip(out_dir / e.path, clip.pixels);
    m.clips.push_back(std::move(e));
  }
  write_manifest(out_dir / "manifest.json", m);
  return m;
}

std::vector<std::uint8_t> trivial_detector(const Tensor<float>& clip) {
  const std::size_t T = clip.dim(1), H = clip.dim(2), W = clip.dim(3), plane = H * W;
  std::vector<std::uint8_t> active(T, 0);
  for (std::size_t t = 0; t < T; ++t) {
    double sx = 0, sy = 0, n = 0;
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const std::size_t i = t * plane + y * W + x;
        const float red = clip[i], green = clip[T * plane + i], blue = clip[2 * T * plane + i];
        if (red - 0.5f * (green + blue) > 0.5f) {
          sx += static_cast<double>(x);
          sy += static_cast<double>(y);
          n += 1;
        }
      }
    if (n == 0) continue;
    const double cx = (sx / n + 0.5) / static_cast<double>(W), cy = (sy / n + 0.5) / static_cast<double>(H);
    const bool inside = cx >= SynthConfig::kBoxLow && cx <= SynthConfig::kBoxHigh && cy >= SynthConfig::kBoxLow &&
                        cy <= SynthConfig::kBoxHigh;
    active[t] = inside ? 0 : 1;
  }
  return active;
}

std::vector<std::size_t> sample_indices(std::size_t length, std::size_t k) {
  if (k == 0 || k > length) {
    throw std::invalid_argument("sample_indices: need 1 <= k <= L, got k=" + std::to_string(k) +
                                " L=" + std::to_string(length));
  }
  std::vector<std::size_t> idx(k, 0);
  if (k == 1) return idx;
  for (std::size_t i = 0; i < k; ++i) {
    // Exact integer rounding of i*(L-1)/(k-1), halves up.
    const std::size_t num = i * (length - 1), den = k - 1;
    idx[i] = (2 * num + den) / (2 * den);
  }
  return idx;
}

SampledClip sample_frames(const Tensor<float>& clip, std::size_t k) {
  if (clip.rank() != 4) throw std::invalid_argument("sample_frames: expected [C,T,H,W]");
  const std::size_t C = clip.dim(0), L = clip.dim(1), plane = clip.dim(2) * clip.dim(3);
  SampledClip out;
  out.indices = sample_indices(L, k);
  out.pixels = Tensor<float>(Shape{C, k, clip.dim(2), clip.dim(3)});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < k; ++i) {
      auto src = clip.values().begin() + static_cast<std::ptrdiff_t>((c * L + out.indices[i]) * plane);
      std::copy(src, src + static_cast<std::ptrdiff_t>(plane), out.pixels.data().begin() + (c * k + i) * plane);
    }
  return out;
}

}  // namespace stan
