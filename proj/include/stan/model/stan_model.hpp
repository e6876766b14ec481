#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <vector>

#include "stan/model/classifier.hpp"
#include "stan/ops.hpp"

namespace stan {

enum class StageKind { Local, Global };

// Hierarchical four-stage network configuration. Stage kinds are fixed to
// local, local, global, global.
struct StanConfig {
  std::size_t num_classes = 4;
  std::size_t frames = 16;
  std::size_t height = 32;
  std::size_t width = 32;
  std::array<std::size_t, 4> stage_channels{16, 32, 64, 128};
  std::array<std::size_t, 4> stage_blocks{1, 1, 2, 1};
  std::array<std::size_t, 4> heads_per_stage{1, 1, 2, 4};
  Triple local_neighborhood{5, 5, 5};
  double ffn_expansion = 4.0;
  Triple dpe_kernel{3, 3, 3};
  bool desk_scale = true;
  double bn_momentum = 0.1;
  double norm_epsilon = 1e-5;

  static constexpr std::array<StageKind, 4> stage_kind{StageKind::Local, StageKind::Local,
                                                       StageKind::Global, StageKind::Global};

  // Channels 16/32/64/128, blocks 1/1/2/1.
  static StanConfig desk(std::size_t num_classes, std::size_t frames, std::size_t height, std::size_t width);
  // Channels 64/128/320/512, blocks 3/4/8/3.
  static StanConfig paper(std::size_t num_classes, std::size_t frames, std::size_t height, std::size_t width);

  std::size_t ffn_hidden(std::size_t channels) const;
  // Token grid extents (t, h, w) of stage `s`.
  Triple stage_extents(std::size_t stage) const;
  // Throws std::invalid_argument naming the failing constraint.
  void validate() const;

  nlohmann::json to_json() const;
  static StanConfig from_json(const nlohmann::json& j);
  bool operator==(const StanConfig&) const = default;
};

template <typename T>
class StanModel final : public VideoClassifier<T> {
 public:
  StanModel(const StanConfig& config, std::uint64_t seed);

  const StanConfig& config() const { return config_; }

  ModelKind kind() const override { return ModelKind::Stan; }
  std::size_t num_classes() const override { return config_.num_classes; }
  Shape input_shape() const override;
  ForwardResult<T> forward(const Tensor<T>& clip) override;
  Tensor<T> expand_cam(const Tensor<T>& cam) const override;
  void set_training(bool on) override { training_ = on; }
  bool training() const override { return training_; }
  ParameterSet<T>& parameters() override { return params_; }
  const ParameterSet<T>& parameters() const override { return params_; }
  nlohmann::json config_json() const override { return config_.to_json(); }
  std::uint64_t seed() const override { return seed_; }

  Tensor<T> classify(const Tensor<T>& clip) { return forward(clip).logits; }

  // Pipeline pieces, exposed for inspection and tests.
  Tensor<T> stem(const Tensor<T>& clip) const;
  // Downsampling convolution entering stage `stage` (1..3).
  Tensor<T> stage_transition(std::size_t stage, const Tensor<T>& tokens) const;
  Tensor<T> dpe(std::size_t stage, std::size_t block, const Tensor<T>& tokens) const;
  Tensor<T> mhra_local(std::size_t stage, std::size_t block, const Tensor<T>& tokens);
  // `attention` receives the [heads, N, N] affinity when non-null.
  Tensor<T> mhra_global(std::size_t stage, std::size_t block, const Tensor<T>& tokens,
                        Tensor<T>* attention = nullptr) const;
  Tensor<T> ffn(std::size_t stage, std::size_t block, const Tensor<T>& tokens) const;
  Tensor<T> block(std::size_t stage, std::size_t block, const Tensor<T>& tokens);
  // Output grid of every stage, in order.
  std::vector<Tensor<T>> stage_outputs(const Tensor<T>& clip);

  // Parameter count implied by a configuration.
  static std::size_t parameter_count(const StanConfig& config);

 private:
  struct Block;

  Block& block_at(std::size_t stage, std::size_t block);
  const Block& block_at(std::size_t stage, std::size_t block) const;

  StanConfig config_;
  std::uint64_t seed_;
  bool training_ = false;
  ParameterSet<T> params_;
  Tensor<T> stem_w_, stem_b_;
  std::array<Tensor<T>, 3> transition_w_, transition_b_;
  std::vector<std::vector<std::shared_ptr<Block>>> stages_;
  Tensor<T> head_w_, head_b_;
};

// Standalone pieces of the global relation aggregator; `rows` is [N, C].
template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& rows, const Tensor<T>& qkv_w, const Tensor<T>& qkv_b,
                               const Tensor<T>& proj_w, const Tensor<T>& proj_b, std::size_t heads,
                               Tensor<T>* attention = nullptr);

// [C,t,h,w] <-> [N,C] token rows.
template <typename T>
Tensor<T> grid_to_rows(const Tensor<T>& grid);
template <typename T>
Tensor<T> rows_to_grid(const Tensor<T>& rows, const Shape& grid_shape);

// Trilinear (half-pixel centred) resampling of [t,h,w] to `extents`.
template <typename T>
std::vector<T> trilinear_resize(const std::vector<T>& values, Triple from, Triple to);

}  // namespace stan
