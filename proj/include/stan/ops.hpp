#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <vector>

#include "stan/tensor.hpp"

namespace stan {

// ---- elementwise ----------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);
template <typename T>
Tensor<T> relu(const Tensor<T>& x);

// Adds bias[c] to every element of channel c, channel-first layout [C, ...].
template <typename T>
Tensor<T> add_channel_bias(const Tensor<T>& x, const Tensor<T>& bias);

// ---- reductions -------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);
// [C, ...] -> [C]: mean over every position of each channel.
template <typename T>
Tensor<T> avg_pool_all(const Tensor<T>& x);
// Scalar view of one element (e.g. the logit of one class).
template <typename T>
Tensor<T> pick(const Tensor<T>& x, std::size_t flat_index);

// ---- layout -----------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& order);
// Slice [start, start+length) of the leading axis.
template <typename T>
Tensor<T> narrow(const Tensor<T>& x, std::size_t start, std::size_t length);

// ---- linear algebra -----------------------------------------------------------

// [M,K] x [K,N] -> [M,N], or batched [B,M,K] x [B,K,N] -> [B,M,N].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// x [N,in] (or [in]) with weight [out,in] and optional bias [out].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);
// Softmax along `axis`.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

// ---- convolution & pooling ----------------------------------------------------

using Triple = std::array<std::size_t, 3>;

struct Conv3dOptions {
  Triple stride{1, 1, 1};
  Triple padding{0, 0, 0};
  std::size_t groups = 1;
};

Triple conv3d_output_extents(const Shape& input, const Shape& weight, const Conv3dOptions& opt);

// input [C_in,T,H,W], weight [C_out, C_in/groups, kT,kH,kW], bias [C_out] or
// undefined. Cross-correlation over the zero-padded input.
template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 const Conv3dOptions& opt);

// Non-overlapping max pooling over [C,T,H,W] with window == stride.
template <typename T>
Tensor<T> max_pool3d(const Tensor<T>& x, Triple window);

// [C,T,h,w] -> [C,1,rows*h,cols*w]; frame t lands in tile (t / cols, t % cols).
template <typename T>
Tensor<T> tile_frames(const Tensor<T>& x, std::size_t rows, std::size_t cols);

// ---- normalization ----------------------------------------------------------

enum class NormMode { Train, Eval };

template <typename T>
struct BatchNormStats {
  std::vector<T> mean;
  std::vector<T> var;
  T momentum = T(0.1);
};

// Per-channel normalization over all positions of [C, ...]. Train mode uses the
// statistics of `x` and updates `running`; eval mode uses `running`.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& shift,
                     BatchNormStats<T>& running, NormMode mode, T epsilon);

// Normalizes each row of [N, C] across its C features.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& shift,
                     T epsilon);

// ---- losses -----------------------------------------------------------------

// logits [N,K] (or [K] for a single sample); mean negative log-likelihood.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<std::size_t>& targets);

}  // namespace stan
