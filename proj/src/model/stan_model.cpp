#include "stan/model/stan_model.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace stan {

// ---- configuration ------------------------------------------------------------

StanConfig StanConfig::desk(std::size_t num_classes, std::size_t frames, std::size_t height, std::size_t width) {
  StanConfig c;
  c.num_classes = num_classes;
  c.frames = frames;
  c.height = height;
  c.width = width;
  c.stage_channels = {16, 32, 64, 128};
  c.stage_blocks = {1, 1, 2, 1};
  for (std::size_t s = 0; s < 4; ++s) c.heads_per_stage[s] = std::max<std::size_t>(1, c.stage_channels[s] / 32);
  c.desk_scale = true;
  return c;
}

StanConfig StanConfig::paper(std::size_t num_classes, std::size_t frames, std::size_t height, std::size_t width) {
  StanConfig c;
  c.num_classes = num_classes;
  c.frames = frames;
  c.height = height;
  c.width = width;
  c.stage_channels = {64, 128, 320, 512};
  c.stage_blocks = {3, 4, 8, 3};
  for (std::size_t s = 0; s < 4; ++s) c.heads_per_stage[s] = std::max<std::size_t>(1, c.stage_channels[s] / 32);
  c.desk_scale = false;
  return c;
}

std::size_t StanConfig::ffn_hidden(std::size_t channels) const {
  return static_cast<std::size_t>(std::lround(ffn_expansion * static_cast<double>(channels)));
}

Triple StanConfig::stage_extents(std::size_t stage) const {
  const std::size_t down = std::size_t{4} << stage;
  return {frames / 2, height / down, width / down};
}

void StanConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("StanConfig: " + what); };
  if (num_classes == 0) fail("num_classes must be positive");
  if (frames == 0 || frames % 2 != 0) fail("frames (" + std::to_string(frames) + ") must be a positive multiple of 2");
  if (height == 0 || height % 32 != 0) fail("height (" + std::to_string(height) + ") must be a positive multiple of 32");
  if (width == 0 || width % 32 != 0) fail("width (" + std::to_string(width) + ") must be a positive multiple of 32");
  for (std::size_t s = 0; s < 4; ++s) {
    const std::string stage = "stage " + std::to_string(s + 1);
    if (stage_channels[s] == 0) fail(stage + " channel width must be positive");
    if (s > 0 && stage_channels[s] <= stage_channels[s - 1]) fail("stage_channels must be strictly increasing");
    if (stage_blocks[s] == 0) fail(stage + " block count must be positive");
    if (heads_per_stage[s] == 0) fail(stage + " head count must be positive");
    if (stage_kind[s] == StageKind::Global && stage_channels[s] % heads_per_stage[s] != 0) {
      fail(stage + " channel width " + std::to_string(stage_channels[s]) + " not divisible by head count " +
           std::to_string(heads_per_stage[s]));
    }
  }
  for (std::size_t d = 0; d < 3; ++d) {
    if (local_neighborhood[d] == 0 || local_neighborhood[d] % 2 == 0) fail("local_neighborhood extents must be odd");
    if (dpe_kernel[d] == 0 || dpe_kernel[d] % 2 == 0) fail("dpe_kernel extents must be odd");
  }
  if (!(ffn_expansion > 0.0) || ffn_hidden(stage_channels[0]) == 0) fail("ffn_expansion must be positive");
  if (!(bn_momentum > 0.0 && bn_momentum <= 1.0)) fail("bn_momentum must be in (0,1]");
  if (!(norm_epsilon > 0.0)) fail("norm_epsilon must be positive");
}

nlohmann::json StanConfig::to_json() const {
  return {{"num_classes", num_classes},
          {"frames", frames},
          {"height", height},
          {"width", width},
          {"stage_channels", stage_channels},
          {"stage_blocks", stage_blocks},
          {"heads_per_stage", heads_per_stage},
          {"local_neighborhood", local_neighborhood},
          {"ffn_expansion", ffn_expansion},
          {"dpe_kernel", dpe_kernel},
          {"desk_scale", desk_scale},
          {"bn_momentum", bn_momentum},
          {"norm_epsilon", norm_epsilon}};
}

StanConfig StanConfig::from_json(const nlohmann::json& j) {
  StanConfig c;
  c.num_classes = j.value("num_classes", c.num_classes);
  c.frames = j.value("frames", c.frames);
  c.height = j.value("height", c.height);
  c.width = j.value("width", c.width);
  c.stage_channels = j.value("stage_channels", c.stage_channels);
  c.stage_blocks = j.value("stage_blocks", c.stage_blocks);
  c.heads_per_stage = j.value("heads_per_stage", c.heads_per_stage);
  c.local_neighborhood = j.value("local_neighborhood", c.local_neighborhood);
  c.ffn_expansion = j.value("ffn_expansion", c.ffn_expansion);
  c.dpe_kernel = j.value("dpe_kernel", c.dpe_kernel);
  c.desk_scale = j.value("desk_scale", c.desk_scale);
  c.bn_momentum = j.value("bn_momentum", c.bn_momentum);
  c.norm_epsilon = j.value("norm_epsilon", c.norm_epsilon);
  return c;
}

// ---- shared pieces --------------------------------------------------------------

template <typename T>
Tensor<T> grid_to_rows(const Tensor<T>& grid) {
  const std::size_t c = grid.dim(0);
  return permute(reshape(grid, Shape{c, grid.numel() / c}), {1, 0});
}

template <typename T>
Tensor<T> rows_to_grid(const Tensor<T>& rows, const Shape& grid_shape) {
  return reshape(permute(rows, {1, 0}), grid_shape);
}

template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& rows, const Tensor<T>& qkv_w, const Tensor<T>& qkv_b,
                               const Tensor<T>& proj_w, const Tensor<T>& proj_b, std::size_t heads,
                               Tensor<T>* attention) {
  const std::size_t n = rows.dim(0);
  const std::size_t c = rows.dim(1);
  if (heads == 0 || c % heads != 0) {
    throw std::invalid_argument("attention: " + std::to_string(c) + " channels not divisible by " +
                                std::to_string(heads) + " heads");
  }
  const std::size_t d = c / heads;
  auto qkv = linear(rows, qkv_w, qkv_b);                                   // [N, 3C]
  qkv = permute(reshape(qkv, Shape{n, 3, heads, d}), {1, 2, 0, 3});        // [3, H, N, d]
  auto q = reshape(narrow(qkv, 0, 1), Shape{heads, n, d});
  auto k = reshape(narrow(qkv, 1, 1), Shape{heads, n, d});
  auto v = reshape(narrow(qkv, 2, 1), Shape{heads, n, d});
  auto scores = scale(matmul(q, permute(k, {0, 2, 1})), T(1) / std::sqrt(static_cast<T>(d)));
  auto affinity = softmax(scores, 2);                                      // [H, N, N]
  if (attention) *attention = affinity;
  auto mixed = reshape(permute(matmul(affinity, v), {1, 0, 2}), Shape{n, c});
  return linear(mixed, proj_w, proj_b);
}

template <typename T>
std::vector<T> trilinear_resize(const std::vector<T>& values, Triple from, Triple to) {
  if (values.size() != from[0] * from[1] * from[2]) {
    throw std::invalid_argument("trilinear_resize: value count does not match extents");
  }
  std::vector<T> cur = values;
  Triple ext = from;
  for (std::size_t axis = 0; axis < 3; ++axis) {
    const std::size_t in_len = ext[axis], out_len = to[axis];
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= ext[d];
    for (std::size_t d = axis + 1; d < 3; ++d) inner *= ext[d];
    std::vector<T> next(outer * out_len * inner);
    const double ratio = static_cast<double>(in_len) / static_cast<double>(out_len);
    for (std::size_t o = 0; o < out_len; ++o) {
      double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
      if (src < 0.0) src = 0.0;
      std::size_t i0 = static_cast<std::size_t>(src);
      if (i0 > in_len - 1) i0 = in_len - 1;
      const std::size_t i1 = std::min(i0 + 1, in_len - 1);
      const T lambda = static_cast<T>(src - static_cast<double>(i0));
      for (std::size_t a = 0; a < outer; ++a)
        for (std::size_t b = 0; b < inner; ++b) {
          const T v0 = cur[(a * in_len + i0) * inner + b];
          const T v1 = cur[(a * in_len + i1) * inner + b];
          next[(a * out_len + o) * inner + b] = (T(1) - lambda) * v0 + lambda * v1;
        }
    }
    cur = std::move(next);
    ext[axis] = out_len;
  }
  return cur;
}

// ---- model ----------------------------------------------------------------------

template <typename T>
struct StanModel<T>::Block {
  StageKind kind;
  std::size_t channels;
  std::size_t heads;
  Tensor<T> dpe_w, dpe_b;
  Tensor<T> norm_scale, norm_shift;
  BatchNormStats<T>* bn = nullptr;
  Tensor<T> pw1_w, pw1_b, dw_w, dw_b, pw2_w, pw2_b;
  Tensor<T> qkv_w, qkv_b, proj_w, proj_b;
  Tensor<T> ffn_norm_scale, ffn_norm_shift, fc1_w, fc1_b, fc2_w, fc2_b;
};

template <typename T>
StanModel<T>::StanModel(const StanConfig& config, std::uint64_t seed) : config_(config), seed_(seed) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const auto& ch = config_.stage_channels;

  stem_w_ = params_.add("stem.weight", Shape{ch[0], 3, 3, 4, 4}, true);
  stem_b_ = params_.add("stem.bias", Shape{ch[0]}, false);
  fill_fan_in_normal(stem_w_, 3 * 3 * 4 * 4, rng);

  stages_.resize(4);
  for (std::size_t s = 0; s < 4; ++s) {
    const std::string sp = "stage" + std::to_string(s);
    const std::size_t c = ch[s];
    if (s > 0) {
      transition_w_[s - 1] = params_.add(sp + ".transition.weight", Shape{c, ch[s - 1], 1, 2, 2}, true);
      transition_b_[s - 1] = params_.add(sp + ".transition.bias", Shape{c}, false);
      fill_fan_in_normal(transition_w_[s - 1], ch[s - 1] * 4, rng);
    }
    for (std::size_t b = 0; b < config_.stage_blocks[s]; ++b) {
      const std::string p = sp + ".block" + std::to_string(b);
      auto blk = std::make_shared<Block>();
      blk->kind = StanConfig::stage_kind[s];
      blk->channels = c;
      blk->heads = config_.heads_per_stage[s];
      const auto& dk = config_.dpe_kernel;
      blk->dpe_w = params_.add(p + ".dpe.weight", Shape{c, 1, dk[0], dk[1], dk[2]}, true);
      blk->dpe_b = params_.add(p + ".dpe.bias", Shape{c}, false);
      if (blk->kind == StageKind::Local) {
        const auto& nb = config_.local_neighborhood;
        blk->norm_scale = params_.add(p + ".mhra.norm.scale", Shape{c}, false);
        blk->norm_shift = params_.add(p + ".mhra.norm.shift", Shape{c}, false);
        fill_constant(blk->norm_scale, T(1));
        blk->bn = &params_.add_batch_norm(p + ".mhra.norm", c, static_cast<T>(config_.bn_momentum));
        blk->pw1_w = params_.add(p + ".mhra.value.weight", Shape{c, c, 1, 1, 1}, true);
        blk->pw1_b = params_.add(p + ".mhra.value.bias", Shape{c}, false);
        fill_fan_in_normal(blk->pw1_w, c, rng);
        blk->dw_w = params_.add(p + ".mhra.affinity.weight", Shape{c, 1, nb[0], nb[1], nb[2]}, true);
        blk->dw_b = params_.add(p + ".mhra.affinity.bias", Shape{c}, false);
        fill_fan_in_normal(blk->dw_w, nb[0] * nb[1] * nb[2], rng);
        blk->pw2_w = params_.add(p + ".mhra.proj.weight", Shape{c, c, 1, 1, 1}, true);
        blk->pw2_b = params_.add(p + ".mhra.proj.bias", Shape{c}, false);
      } else {
        blk->norm_scale = params_.add(p + ".mhra.norm.scale", Shape{c}, false);
        blk->norm_shift = params_.add(p + ".mhra.norm.shift", Shape{c}, false);
        fill_constant(blk->norm_scale, T(1));
        blk->qkv_w = params_.add(p + ".mhra.qkv.weight", Shape{3 * c, c}, true);
        blk->qkv_b = params_.add(p + ".mhra.qkv.bias", Shape{3 * c}, false);
        fill_truncated_normal(blk->qkv_w, 0.02, rng);
        blk->proj_w = params_.add(p + ".mhra.proj.weight", Shape{c, c}, true);
        blk->proj_b = params_.add(p + ".mhra.proj.bias", Shape{c}, false);
      }
      const std::size_t hidden = config_.ffn_hidden(c);
      blk->ffn_norm_scale = params_.add(p + ".ffn.norm.scale", Shape{c}, false);
      blk->ffn_norm_shift = params_.add(p + ".ffn.norm.shift", Shape{c}, false);
      fill_constant(blk->ffn_norm_scale, T(1));
      blk->fc1_w = params_.add(p + ".ffn.fc1.weight", Shape{hidden, c}, true);
      blk->fc1_b = params_.add(p + ".ffn.fc1.bias", Shape{hidden}, false);
      fill_truncated_normal(blk->fc1_w, 0.02, rng);
      blk->fc2_w = params_.add(p + ".ffn.fc2.weight", Shape{c, hidden}, true);
      blk->fc2_b = params_.add(p + ".ffn.fc2.bias", Shape{c}, false);
      stages_[s].push_back(std::move(blk));
    }
  }
  head_w_ = params_.add("head.weight", Shape{config_.num_classes, ch[3]}, true);
  head_b_ = params_.add("head.bias", Shape{config_.num_classes}, false);
  fill_truncated_normal(head_w_, 0.02, rng);
}

template <typename T>
Shape StanModel<T>::input_shape() const {
  return {3, config_.frames, config_.height, config_.width};
}

template <typename T>
typename StanModel<T>::Block& StanModel<T>::block_at(std::size_t stage, std::size_t block) {
  return *stages_.at(stage).at(block);
}

template <typename T>
const typename StanModel<T>::Block& StanModel<T>::block_at(std::size_t stage, std::size_t block) const {
  return *stages_.at(stage).at(block);
}

template <typename T>
Tensor<T> StanModel<T>::stem(const Tensor<T>& clip) const {
  Conv3dOptions opt;
  opt.stride = {2, 4, 4};
  opt.padding = {1, 0, 0};
  return conv3d(clip, stem_w_, stem_b_, opt);
}

template <typename T>
Tensor<T> StanModel<T>::stage_transition(std::size_t stage, const Tensor<T>& tokens) const {
  if (stage < 1 || stage > 3) throw std::out_of_range("stage_transition: stage must be 1..3");
  if (tokens.rank() != 4 || tokens.dim(2) % 2 != 0 || tokens.dim(3) % 2 != 0) {
    throw std::invalid_argument("stage_transition: spatial extents of " + to_string(tokens.shape()) +
                                " are not even");
  }
  Conv3dOptions opt;
  opt.stride = {1, 2, 2};
  return conv3d(tokens, transition_w_[stage - 1], transition_b_[stage - 1], opt);
}

template <typename T>
Tensor<T> StanModel<T>::dpe(std::size_t stage, std::size_t block, const Tensor<T>& tokens) const {
  const Block& b = block_at(stage, block);
  Conv3dOptions opt;
  opt.groups = b.channels;
  opt.padding = {config_.dpe_kernel[0] / 2, config_.dpe_kernel[1] / 2, config_.dpe_kernel[2] / 2};
  return add(tokens, conv3d(tokens, b.dpe_w, b.dpe_b, opt));
}

template <typename T>
Tensor<T> StanModel<T>::mhra_local(std::size_t stage, std::size_t block, const Tensor<T>& tokens) {
  Block& b = block_at(stage, block);
  if (b.kind != StageKind::Local) throw std::logic_error("mhra_local on a global stage");
  auto y = batch_norm(tokens, b.norm_scale, b.norm_shift, *b.bn, training_ ? NormMode::Train : NormMode::Eval,
                      static_cast<T>(config_.norm_epsilon));
  y = conv3d(y, b.pw1_w, b.pw1_b, Conv3dOptions{});
  Conv3dOptions dw;
  dw.groups = b.channels;
  const auto& nb = config_.local_neighborhood;
  dw.padding = {nb[0] / 2, nb[1] / 2, nb[2] / 2};
  y = conv3d(y, b.dw_w, b.dw_b, dw);
  y = conv3d(y, b.pw2_w, b.pw2_b, Conv3dOptions{});
  return add(tokens, y);
}

template <typename T>
Tensor<T> StanModel<T>::mhra_global(std::size_t stage, std::size_t block, const Tensor<T>& tokens,
                                    Tensor<T>* attention) const {
  const Block& b = block_at(stage, block);
  if (b.kind != StageKind::Global) throw std::logic_error("mhra_global on a local stage");
  auto rows = layer_norm(grid_to_rows(tokens), b.norm_scale, b.norm_shift, static_cast<T>(config_.norm_epsilon));
  auto mixed = multi_head_attention(rows, b.qkv_w, b.qkv_b, b.proj_w, b.proj_b, b.heads, attention);
  return add(tokens, rows_to_grid(mixed, tokens.shape()));
}

template <typename T>
Tensor<T> StanModel<T>::ffn(std::size_t stage, std::size_t block, const Tensor<T>& tokens) const {
  const Block& b = block_at(stage, block);
  auto rows = layer_norm(grid_to_rows(tokens), b.ffn_norm_scale, b.ffn_norm_shift,
                         static_cast<T>(config_.norm_epsilon));
  auto hidden = gelu(linear(rows, b.fc1_w, b.fc1_b));
  return add(tokens, rows_to_grid(linear(hidden, b.fc2_w, b.fc2_b), tokens.shape()));
}

template <typename T>
Tensor<T> StanModel<T>::block(std::size_t stage, std::size_t block, const Tensor<T>& tokens) {
  auto x = dpe(stage, block, tokens);
  x = block_at(stage, block).kind == StageKind::Local ? mhra_local(stage, block, x) : mhra_global(stage, block, x);
  return ffn(stage, block, x);
}

template <typename T>
std::vector<Tensor<T>> StanModel<T>::stage_outputs(const Tensor<T>& clip) {
  if (clip.shape() != input_shape()) {
    throw std::invalid_argument("STAN input " + to_string(clip.shape()) + " does not match configured " +
                                to_string(input_shape()));
  }
  std::vector<Tensor<T>> outs;
  auto x = stem(clip);
  for (std::size_t s = 0; s < 4; ++s) {
    if (s > 0) x = stage_transition(s, x);
    for (std::size_t b = 0; b < stages_[s].size(); ++b) x = block(s, b, x);
    outs.push_back(x);
  }
  return outs;
}

template <typename T>
ForwardResult<T> StanModel<T>::forward(const Tensor<T>& clip) {
  auto stages = stage_outputs(clip);
  ForwardResult<T> r;
  r.cam_activation = stages.back();
  r.logits = linear(avg_pool_all(stages.back()), head_w_, head_b_);
  return r;
}

template <typename T>
Tensor<T> StanModel<T>::expand_cam(const Tensor<T>& cam) const {
  const Triple from = config_.stage_extents(3);
  if (cam.numel() != from[0] * from[1] * from[2]) {
    throw std::invalid_argument("expand_cam: map " + to_string(cam.shape()) + " does not match the final grid");
  }
  const Triple to{config_.frames, config_.height, config_.width};
  auto plane = trilinear_resize(cam.values(), from, to);
  std::vector<T> volume;
  volume.reserve(3 * plane.size());
  for (int c = 0; c < 3; ++c) volume.insert(volume.end(), plane.begin(), plane.end());
  return Tensor<T>(input_shape(), std::move(volume));
}

template <typename T>
std::size_t StanModel<T>::parameter_count(const StanConfig& config) {
  return StanModel<T>(config, 0).parameters().count();
}

template class StanModel<float>;
template class StanModel<double>;
template Tensor<float> multi_head_attention<float>(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                                                   const Tensor<float>&, const Tensor<float>&, std::size_t,
                                                   Tensor<float>*);
template Tensor<double> multi_head_attention<double>(const Tensor<double>&, const Tensor<double>&,
                                                     const Tensor<double>&, const Tensor<double>&,
                                                     const Tensor<double>&, std::size_t, Tensor<double>*);
template Tensor<float> grid_to_rows<float>(const Tensor<float>&);
template Tensor<double> grid_to_rows<double>(const Tensor<double>&);
template Tensor<float> rows_to_grid<float>(const Tensor<float>&, const Shape&);
template Tensor<double> rows_to_grid<double>(const Tensor<double>&, const Shape&);
template std::vector<float> trilinear_resize<float>(const std::vector<float>&, Triple, Triple);
template std::vector<double> trilinear_resize<double>(const std::vector<double>&, Triple, Triple);

}  // namespace stan
