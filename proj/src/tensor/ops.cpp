#include "stan/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

#include "kernels.hpp"

namespace stan {

namespace {

template <typename T>
T* grad_ptr(const Tensor<T>& t) {
  if (!t.defined() || !t.requires_grad()) return nullptr;
  return t.mutable_grad().data();
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + to_string(a.shape()) +
                                " vs " + to_string(b.shape()));
  }
}

void require(bool ok, const std::string& message) {
  if (!ok) throw std::invalid_argument(message);
}

}  // namespace

// ---- elementwise ----------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  record<T>(out, "add", {a, b}, [a, b](const TensorImpl<T>& self) {
    const auto& g = self.grad;
    if (T* ga = grad_ptr(a))
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    if (T* gb = grad_ptr(b))
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
  });
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
  record<T>(out, "sub", {a, b}, [a, b](const TensorImpl<T>& self) {
    const auto& g = self.grad;
    if (T* ga = grad_ptr(a))
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    if (T* gb = grad_ptr(b))
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
  });
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  record<T>(out, "mul", {a, b}, [a, b](const TensorImpl<T>& self) {
    const auto& g = self.grad;
    auto x = a.data();
    auto y = b.data();
    if (T* ga = grad_ptr(a))
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
    if (T* gb = grad_ptr(b))
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
  });
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * factor;
  record<T>(out, "scale", {a}, [a, factor](const TensorImpl<T>& self) {
    const auto& g = self.grad;
    if (T* ga = grad_ptr(a))
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  });
  return out;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  auto o = out.data();
  auto in = x.data();
  const T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  for (std::size_t i = 0; i < o.size(); ++i) {
    o[i] = in[i] * T(0.5) * (T(1) + std::erf(in[i] * inv_sqrt2));
  }
  record<T>(out, "gelu", {x}, [x, inv_sqrt2](const TensorImpl<T>& self) {
    T* gx = grad_ptr(x);
    if (!gx) return;
    const auto& g = self.grad;
    auto in = x.data();
    const T inv_sqrt_2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = in[i];
      const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
      const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
      gx[i] += g[i] * (cdf + v * pdf);
    }
  });
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  auto o = out.data();
  auto in = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = in[i] > T(0) ? in[i] : T(0);
  record<T>(out, "relu", {x}, [x](const TensorImpl<T>& self) {
    T* gx = grad_ptr(x);
    if (!gx) return;
    const auto& g = self.grad;
    auto in = x.data();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (in[i] > T(0)) gx[i] += g[i];
  });
  return out;
}

template <typename T>
Tensor<T> add_channel_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  const std::size_t channels = x.dim(0);
  require(bias.numel() == channels, "add_channel_bias: bias length " + std::to_string(bias.numel()) +
                                        " does not match channel extent " + std::to_string(channels));
  const std::size_t inner = x.numel() / channels;
  Tensor<T> out(x.shape());
  auto o = out.data();
  auto in = x.data();
  auto b = bias.data();
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t i = 0; i < inner; ++i) o[c * inner + i] = in[c * inner + i] + b[c];
  record<T>(out, "add_channel_bias", {x, bias}, [x, bias, channels, inner](const TensorImpl<T>& self) {
    const auto& g = self.grad;
    if (T* gx = grad_ptr(x))
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    if (T* gb = grad_ptr(bias)) {
      for (std::size_t c = 0; c < channels; ++c) {
        T acc = 0;
        for (std::size_t i = 0; i < inner; ++i) acc += g[c * inner + i];
        gb[c] += acc;
      }
    }
  });
  return out;
}

// ---- reductions -------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.data()) acc += v;
  Tensor<T> out(Shape{1}, acc);
  record<T>(out, "sum", {x}, [x](const TensorImpl<T>& self) {
    T* gx = grad_ptr(x);
    if (!gx) return;
    const T g = self.grad[0];
    for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += g;
  });
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> avg_pool_all(const Tensor<T>& x) {
  const std::size_t channels = x.dim(0);
  const std::size_t inner = x.numel() / channels;
  Tensor<T> out(Shape{channels});
  auto in = x.data();
  for (std::size_t c = 0; c < channels; ++c) {
    T acc = 0;
    for (std::size_t i = 0; i < inner; ++i) acc += in[c * inner + i];
    out[c] = acc / static_cast<T>(inner);
  }
  record<T>(out, "avg_pool_all", {x}, [x, channels, inner](const TensorImpl<T>& self) {
    T* gx = grad_ptr(x);
    if (!gx) return;
    for (std::size_t c = 0; c < channels; ++c) {
      const T g = self.grad[c] / static_cast<T>(inner);
      for (std::size_t i = 0; i < inner; ++i) gx[c * inner + i] += g;
    }
  });
  return out;
}

template <typename T>
Tensor<T> pick(const Tensor<T>& x, std::size_t flat_index) {
  require(flat_index < x.numel(), "pick: index " + std::to_string(flat_index) + " out of range for " +
                                      to_string(x.shape()));
  Tensor<T> out(Shape{1}, x[flat_index]);
  record<T>(out, "pick", {x}, [x, flat_index](const TensorImpl<T>& self) {
    if (T* gx = grad_ptr(x)) gx[flat_index] += self.grad[0];
  });
  return out;
}

// ---- layout -----------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  require(numel(shape) == x.numel(),
          "reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  Tensor<T> out(std::move(shape), x.values());
  record<T>(out, "reshape", {x}, [x](const TensorImpl<T>& self) {
    T* gx = grad_ptr(x);
    if (!gx) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
  });
  return out;
}

namespace {

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

// For each output flat index, the source flat index under `order`.
std::vector<std::size_t> permute_map(const Shape& in_shape, const std::vector<std::size_t>& order) {
  const std::size_t rank = in_shape.size();
  const auto in_strides = strides_of(in_shape);
  Shape out_shape(rank);
  std::vector<std::size_t> src_stride(rank);
  for (std::size_t d = 0; d < rank; ++d) {
    out_shape[d] = in_shape[order[d]];
    src_stride[d] = in_strides[order[d]];
  }
  const std::size_t n = numel(in_shape);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t src = 0;
  for (std::size_t o = 0; o < n; ++o) {
    map[o] = src;
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      src += src_stride[d];
      if (idx[d] < out_shape[d]) break;
      src -= src_stride[d] * out_shape[d];
      idx[d] = 0;
    }
  }
  return map;
}

}  // namespace

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& order) {
  const std::size_t rank = x.rank();
  require(order.size() == rank, "permute: order has " + std::to_string(order.size()) +
                                    " axes for rank " + std::to_string(rank));
  std::vector<bool> seen(rank, false);
  for (std::size_t d : order) {
    require(d < rank && !seen[d], "permute: order is not a permutation");
    seen[d] = true;
  }
  Shape out_shape(rank);
  for (std::size_t d = 0; d < rank; ++d) out_shape[d] = x.dim(order[d]);
  auto map = permute_map(x.shape(), order);
  Tensor<T> out(out_shape);
  auto o = out.data();
  auto in = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = in[map[i]];
  record<T>(out, "permute", {x}, [x, map = std::move(map)](const TensorImpl<T>& self) {
    T* gx = grad_ptr(x);
    if (!gx) return;
    for (std::size_t i = 0; i < map.size(); ++i) gx[map[i]] += self.grad[i];
  });
  return out;
}

template <typename T>
Tensor<T> narrow(const Tensor<T>& x, std::size_t start, std::size_t length) {
  require(length > 0 && start + length <= x.dim(0),
          "narrow: range [" + std::to_string(start) + "," + std::to_string(start + length) +
              ") exceeds leading extent " + std::to_string(x.dim(0)));
  Shape shape = x.shape();
  shape[0] = length;
  const std::size_t inner = x.numel() / x.dim(0);
  const std::size_t offset = start * inner;
  std::vector<T> values(x.data().begin() + offset, x.data().begin() + offset + length * inner);
  Tensor<T> out(shape, std::move(values));
  record<T>(out, "narrow", {x}, [x, offset](const TensorImpl<T>& self) {
    T* gx = grad_ptr(x);
    if (!gx) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[offset + i] += self.grad[i];
  });
  return out;
}

// ---- linear algebra -----------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const bool batched = a.rank() == 3;
  require((a.rank() == 2 && b.rank() == 2) || (a.rank() == 3 && b.rank() == 3),
          "matmul: expected two rank-2 or two rank-3 operands, got " + to_string(a.shape()) + " and " +
              to_string(b.shape()));
  const std::size_t batch = batched ? a.dim(0) : 1;
  const std::size_t m = a.dim(a.rank() - 2);
  const std::size_t k = a.dim(a.rank() - 1);
  const std::size_t n = b.dim(b.rank() - 1);
  require(!batched || b.dim(0) == batch, "matmul: batch extent mismatch " + to_string(a.shape()) +
                                             " vs " + to_string(b.shape()));
  require(b.dim(b.rank() - 2) == k, "matmul: inner dimension mismatch " + to_string(a.shape()) +
                                        " vs " + to_string(b.shape()));
  Tensor<T> out(batched ? Shape{batch, m, n} : Shape{m, n});
  for (std::size_t bi = 0; bi < batch; ++bi) {
    kernels::gemm_nn(m, n, k, a.data().data() + bi * m * k, b.data().data() + bi * k * n,
                     out.data().data() + bi * m * n);
  }
  record<T>(out, "matmul", {a, b}, [a, b, batch, m, n, k](const TensorImpl<T>& self) {
    T* ga = grad_ptr(a);
    T* gb = grad_ptr(b);
    for (std::size_t bi = 0; bi < batch; ++bi) {
      const T* g = self.grad.data() + bi * m * n;
      if (ga) kernels::gemm_nt(m, k, n, g, b.data().data() + bi * k * n, ga + bi * m * k);
      if (gb) kernels::gemm_tn(k, n, m, a.data().data() + bi * m * k, g, gb + bi * k * n);
    }
  });
  return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  require(weight.rank() == 2, "linear: weight must be [out,in], got " + to_string(weight.shape()));
  const std::size_t out_features = weight.dim(0);
  const std::size_t in_features = weight.dim(1);
  const bool vector_input = x.rank() == 1;
  require(x.rank() <= 2 && x.dim(x.rank() - 1) == in_features,
          "linear: input " + to_string(x.shape()) + " does not match weight " + to_string(weight.shape()));
  if (bias.defined()) {
    require(bias.numel() == out_features, "linear: bias length " + std::to_string(bias.numel()) +
                                              " does not match " + std::to_string(out_features));
  }
  const std::size_t rows = vector_input ? 1 : x.dim(0);
  Tensor<T> out(vector_input ? Shape{out_features} : Shape{rows, out_features});
  T* o = out.data().data();
  if (bias.defined()) {
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(bias.data().begin(), bias.data().end(), o + r * out_features);
  }
  kernels::gemm_nt(rows, out_features, in_features, x.data().data(), weight.data().data(), o);
  std::vector<Tensor<T>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  record<T>(out, "linear", std::move(inputs),
            [x, weight, bias, rows, out_features, in_features](const TensorImpl<T>& self) {
              const T* g = self.grad.data();
              if (T* gx = grad_ptr(x))
                kernels::gemm_nn(rows, in_features, out_features, g, weight.data().data(), gx);
              if (T* gw = grad_ptr(weight))
                kernels::gemm_tn(out_features, in_features, rows, g, x.data().data(), gw);
              if (T* gb = grad_ptr(bias)) {
                for (std::size_t r = 0; r < rows; ++r)
                  for (std::size_t j = 0; j < out_features; ++j) gb[j] += g[r * out_features + j];
              }
            });
  return out;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  require(axis < x.rank(), "softmax: axis " + std::to_string(axis) + " out of range for " +
                               to_string(x.shape()));
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= x.dim(d);
  for (std::size_t d = axis + 1; d < x.rank(); ++d) inner *= x.dim(d);
  const std::size_t len = x.dim(axis);
  Tensor<T> out(x.shape());
  auto in = x.data();
  auto o = out.data();
  for (std::size_t a = 0; a < outer; ++a) {
    for (std::size_t c = 0; c < inner; ++c) {
      const std::size_t base = a * len * inner + c;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t i = 0; i < len; ++i) mx = std::max(mx, in[base + i * inner]);
      T total = 0;
      for (std::size_t i = 0; i < len; ++i) {
        const T e = std::exp(in[base + i * inner] - mx);
        o[base + i * inner] = e;
        total += e;
      }
      for (std::size_t i = 0; i < len; ++i) o[base + i * inner] /= total;
    }
  }
  record<T>(out, "softmax", {x}, [x, outer, inner, len](const TensorImpl<T>& self) {
    T* gx = grad_ptr(x);
    if (!gx) return;
    const auto& y = self.data;
    const auto& g = self.grad;
    for (std::size_t a = 0; a < outer; ++a) {
      for (std::size_t c = 0; c < inner; ++c) {
        const std::size_t base = a * len * inner + c;
        T dot = 0;
        for (std::size_t i = 0; i < len; ++i) dot += g[base + i * inner] * y[base + i * inner];
        for (std::size_t i = 0; i < len; ++i) {
          const std::size_t p = base + i * inner;
          gx[p] += y[p] * (g[p] - dot);
        }
      }
    }
  });
  return out;
}

// ---- convolution & pooling ----------------------------------------------------

Triple conv3d_output_extents(const Shape& input, const Shape& weight, const Conv3dOptions& opt) {
  static const char* axis_names[3] = {"temporal", "height", "width"};
  Triple out{};
  for (std::size_t d = 0; d < 3; ++d) {
    require(opt.stride[d] > 0, std::string("conv3d: zero stride on ") + axis_names[d] + " axis");
    const std::size_t padded = input[1 + d] + 2 * opt.padding[d];
    const std::size_t k = weight[2 + d];
    require(padded >= k, std::string("conv3d: kernel extent ") + std::to_string(k) + " exceeds padded " +
                             axis_names[d] + " extent " + std::to_string(padded));
    out[d] = (padded - k) / opt.stride[d] + 1;
  }
  return out;
}

namespace {

struct ConvGeometry {
  std::size_t cin, t, h, w;
  std::size_t cout, cin_per_group, kt, kh, kw;
  std::size_t ot, oh, ow;
  std::size_t groups;
  Triple stride, pad;

  std::size_t cout_per_group() const { return cout / groups; }
  bool pointwise() const {
    return kt == 1 && kh == 1 && kw == 1 && groups == 1 && stride == Triple{1, 1, 1} &&
           pad == Triple{0, 0, 0};
  }
};

// Range of output positions o with 0 <= o*s - p + k < extent.
inline void valid_range(std::size_t extent, std::size_t out_extent, std::size_t s, std::size_t p,
                        std::size_t k, std::size_t& lo, std::size_t& hi) {
  // o*s >= p - k
  const long long first = static_cast<long long>(p) - static_cast<long long>(k);
  lo = first <= 0 ? 0 : static_cast<std::size_t>((first + static_cast<long long>(s) - 1) / static_cast<long long>(s));
  // o*s <= extent - 1 + p - k
  const long long last = static_cast<long long>(extent) - 1 + static_cast<long long>(p) - static_cast<long long>(k);
  if (last < 0) {
    lo = 1;
    hi = 0;
    return;
  }
  hi = std::min<std::size_t>(out_extent - 1, static_cast<std::size_t>(last) / s);
}

// Calls body(out_offset, in_offset, count, in_step) for every contiguous run of
// output positions along W that one weight tap touches.
template <typename Body>
void for_each_tap_run(const ConvGeometry& g, std::size_t kt, std::size_t kh, std::size_t kw, Body&& body) {
  std::size_t t_lo, t_hi, h_lo, h_hi, w_lo, w_hi;
  valid_range(g.t, g.ot, g.stride[0], g.pad[0], kt, t_lo, t_hi);
  valid_range(g.h, g.oh, g.stride[1], g.pad[1], kh, h_lo, h_hi);
  valid_range(g.w, g.ow, g.stride[2], g.pad[2], kw, w_lo, w_hi);
  if (t_lo > t_hi || h_lo > h_hi || w_lo > w_hi) return;
  const std::size_t count = w_hi - w_lo + 1;
  for (std::size_t ot = t_lo; ot <= t_hi; ++ot) {
    const std::size_t it = ot * g.stride[0] + kt - g.pad[0];
    for (std::size_t oh = h_lo; oh <= h_hi; ++oh) {
      const std::size_t ih = oh * g.stride[1] + kh - g.pad[1];
      const std::size_t iw = w_lo * g.stride[2] + kw - g.pad[2];
      body((ot * g.oh + oh) * g.ow + w_lo, (it * g.h + ih) * g.w + iw, count);
    }
  }
}

template <typename T>
void conv3d_forward(const ConvGeometry& g, const T* in, const T* weight, T* out) {
  const std::size_t in_plane = g.t * g.h * g.w;
  const std::size_t out_plane = g.ot * g.oh * g.ow;
  const std::size_t taps = g.kt * g.kh * g.kw;
  const std::size_t sw = g.stride[2];
  for (std::size_t oc = 0; oc < g.cout; ++oc) {
    const std::size_t group = oc / g.cout_per_group();
    T* o = out + oc * out_plane;
    for (std::size_t icg = 0; icg < g.cin_per_group; ++icg) {
      const T* x = in + (group * g.cin_per_group + icg) * in_plane;
      const T* wk = weight + (oc * g.cin_per_group + icg) * taps;
      for (std::size_t kt = 0; kt < g.kt; ++kt)
        for (std::size_t kh = 0; kh < g.kh; ++kh)
          for (std::size_t kw = 0; kw < g.kw; ++kw) {
            const T wv = wk[(kt * g.kh + kh) * g.kw + kw];
            for_each_tap_run(g, kt, kh, kw, [&](std::size_t oo, std::size_t io, std::size_t n) {
              T* orow = o + oo;
              const T* xrow = x + io;
              if (sw == 1) {
                for (std::size_t i = 0; i < n; ++i) orow[i] += wv * xrow[i];
              } else {
                for (std::size_t i = 0; i < n; ++i) orow[i] += wv * xrow[i * sw];
              }
            });
          }
    }
  }
}

template <typename T>
void conv3d_backward(const ConvGeometry& g, const T* in, const T* weight, const T* gout, T* gin, T* gweight) {
  const std::size_t in_plane = g.t * g.h * g.w;
  const std::size_t out_plane = g.ot * g.oh * g.ow;
  const std::size_t taps = g.kt * g.kh * g.kw;
  const std::size_t sw = g.stride[2];
  for (std::size_t oc = 0; oc < g.cout; ++oc) {
    const std::size_t group = oc / g.cout_per_group();
    const T* go = gout + oc * out_plane;
    for (std::size_t icg = 0; icg < g.cin_per_group; ++icg) {
      const std::size_t ic = group * g.cin_per_group + icg;
      const T* x = in + ic * in_plane;
      T* gx = gin ? gin + ic * in_plane : nullptr;
      const T* wk = weight + (oc * g.cin_per_group + icg) * taps;
      T* gwk = gweight ? gweight + (oc * g.cin_per_group + icg) * taps : nullptr;
      for (std::size_t kt = 0; kt < g.kt; ++kt)
        for (std::size_t kh = 0; kh < g.kh; ++kh)
          for (std::size_t kw = 0; kw < g.kw; ++kw) {
            const std::size_t tap = (kt * g.kh + kh) * g.kw + kw;
            const T wv = wk[tap];
            T acc = 0;
            for_each_tap_run(g, kt, kh, kw, [&](std::size_t oo, std::size_t io, std::size_t n) {
              const T* grow = go + oo;
              if (gx) {
                T* gxrow = gx + io;
                if (sw == 1) {
                  for (std::size_t i = 0; i < n; ++i) gxrow[i] += wv * grow[i];
                } else {
                  for (std::size_t i = 0; i < n; ++i) gxrow[i * sw] += wv * grow[i];
                }
              }
              if (gwk) {
                const T* xrow = x + io;
                for (std::size_t i = 0; i < n; ++i) acc += grow[i] * xrow[i * sw];
              }
            });
            if (gwk) gwk[tap] += acc;
          }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 const Conv3dOptions& opt) {
  require(input.rank() == 4, "conv3d: input must be [C,T,H,W], got " + to_string(input.shape()));
  require(weight.rank() == 5, "conv3d: weight must be [C_out,C_in/groups,kT,kH,kW], got " +
                                  to_string(weight.shape()));
  require(opt.groups > 0, "conv3d: groups must be positive");
  const std::size_t cin = input.dim(0);
  const std::size_t cout = weight.dim(0);
  require(cin % opt.groups == 0, "conv3d: input channels " + std::to_string(cin) +
                                     " not divisible by groups " + std::to_string(opt.groups));
  require(cout % opt.groups == 0, "conv3d: output channels " + std::to_string(cout) +
                                      " not divisible by groups " + std::to_string(opt.groups));
  require(weight.dim(1) == cin / opt.groups,
          "conv3d: weight input-channel extent " + std::to_string(weight.dim(1)) + " does not match " +
              std::to_string(cin) + "/" + std::to_string(opt.groups));
  if (bias.defined()) {
    require(bias.numel() == cout, "conv3d: bias length " + std::to_string(bias.numel()) +
                                      " does not match output channels " + std::to_string(cout));
  }
  const Triple oext = conv3d_output_extents(input.shape(), weight.shape(), opt);
  ConvGeometry g{cin,         input.dim(1), input.dim(2), input.dim(3), cout,       weight.dim(1),
                 weight.dim(2), weight.dim(3), weight.dim(4), oext[0],     oext[1],      oext[2],
                 opt.groups,  opt.stride,   opt.padding};
  Tensor<T> out(Shape{cout, oext[0], oext[1], oext[2]});
  const std::size_t out_plane = oext[0] * oext[1] * oext[2];
  T* o = out.data().data();
  if (bias.defined()) {
    for (std::size_t c = 0; c < cout; ++c) std::fill(o + c * out_plane, o + (c + 1) * out_plane, bias[c]);
  }
  if (g.pointwise()) {
    kernels::gemm_nn(cout, out_plane, cin, weight.data().data(), input.data().data(), o);
  } else {
    conv3d_forward(g, input.data().data(), weight.data().data(), o);
  }
  std::vector<Tensor<T>> inputs{input, weight};
  if (bias.defined()) inputs.push_back(bias);
  record<T>(out, "conv3d", std::move(inputs), [input, weight, bias, g, out_plane](const TensorImpl<T>& self) {
    T* gin = grad_ptr(input);
    T* gw = grad_ptr(weight);
    const T* go = self.grad.data();
    if (g.pointwise()) {
      if (gin) kernels::gemm_tn(g.cin, out_plane, g.cout, weight.data().data(), go, gin);
      if (gw) kernels::gemm_nt(g.cout, g.cin, out_plane, go, input.data().data(), gw);
    } else if (gin || gw) {
      conv3d_backward(g, input.data().data(), weight.data().data(), go, gin, gw);
    }
    if (T* gb = grad_ptr(bias)) {
      for (std::size_t c = 0; c < g.cout; ++c) {
        T acc = 0;
        for (std::size_t i = 0; i < out_plane; ++i) acc += go[c * out_plane + i];
        gb[c] += acc;
      }
    }
  });
  return out;
}

template <typename T>
Tensor<T> max_pool3d(const Tensor<T>& x, Triple window) {
  require(x.rank() == 4, "max_pool3d: input must be [C,T,H,W], got " + to_string(x.shape()));
  for (std::size_t d = 0; d < 3; ++d) {
    require(window[d] > 0 && x.dim(1 + d) % window[d] == 0,
            "max_pool3d: extent " + std::to_string(x.dim(1 + d)) + " of axis " + std::to_string(1 + d) +
                " not divisible by window " + std::to_string(window[d]));
  }
  const std::size_t c = x.dim(0), t = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t ot = t / window[0], oh = h / window[1], ow = w / window[2];
  Tensor<T> out(Shape{c, ot, oh, ow});
  std::vector<std::size_t> argmax(out.numel());
  auto in = x.data();
  std::size_t o = 0;
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t a = 0; a < ot; ++a)
      for (std::size_t b = 0; b < oh; ++b)
        for (std::size_t d = 0; d < ow; ++d, ++o) {
          std::size_t best = 0;
          T best_v = -std::numeric_limits<T>::infinity();
          for (std::size_t i = 0; i < window[0]; ++i)
            for (std::size_t j = 0; j < window[1]; ++j)
              for (std::size_t k = 0; k < window[2]; ++k) {
                const std::size_t p = ((ci * t + a * window[0] + i) * h + b * window[1] + j) * w + d * window[2] + k;
                if (in[p] > best_v) {
                  best_v = in[p];
                  best = p;
                }
              }
          out[o] = best_v;
          argmax[o] = best;
        }
  record<T>(out, "max_pool3d", {x}, [x, argmax = std::move(argmax)](const TensorImpl<T>& self) {
    T* gx = grad_ptr(x);
    if (!gx) return;
    for (std::size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += self.grad[i];
  });
  return out;
}

template <typename T>
Tensor<T> tile_frames(const Tensor<T>& x, std::size_t rows, std::size_t cols) {
  require(x.rank() == 4, "tile_frames: input must be [C,T,h,w], got " + to_string(x.shape()));
  const std::size_t c = x.dim(0), t = x.dim(1), h = x.dim(2), w = x.dim(3);
  require(rows * cols >= t, "tile_frames: grid " + std::to_string(rows) + "x" + std::to_string(cols) +
                                " cannot hold " + std::to_string(t) + " frames");
  const std::size_t ph = rows * h, pw = cols * w;
  Tensor<T> out(Shape{c, 1, ph, pw});
  // map[i] = destination of source element i.
  std::vector<std::size_t> map(x.numel());
  std::size_t i = 0;
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t f = 0; f < t; ++f) {
      const std::size_t r0 = (f / cols) * h, c0 = (f % cols) * w;
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t xx = 0; xx < w; ++xx, ++i) map[i] = (ci * ph + r0 + y) * pw + c0 + xx;
    }
  auto in = x.data();
  for (std::size_t j = 0; j < map.size(); ++j) out[map[j]] = in[j];
  record<T>(out, "tile_frames", {x}, [x, map = std::move(map)](const TensorImpl<T>& self) {
    T* gx = grad_ptr(x);
    if (!gx) return;
    for (std::size_t j = 0; j < map.size(); ++j) gx[j] += self.grad[map[j]];
  });
  return out;
}

// ---- normalization ----------------------------------------------------------

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& shift,
                     BatchNormStats<T>& running, NormMode mode, T epsilon) {
  require(epsilon > T(0), "batch_norm: epsilon must be positive");
  const std::size_t channels = x.dim(0);
  require(scale.numel() == channels && shift.numel() == channels,
          "batch_norm: scale/shift length does not match channel extent " + std::to_string(channels));
  if (running.mean.empty()) {
    running.mean.assign(channels, T(0));
    running.var.assign(channels, T(1));
  }
  require(running.mean.size() == channels && running.var.size() == channels,
          "batch_norm: running statistics length does not match channel extent");
  const std::size_t inner = x.numel() / channels;
  auto in = x.data();
  Tensor<T> out(x.shape());
  auto o = out.data();
  std::vector<T> inv_std(channels);
  std::vector<T> xhat;
  if (mode == NormMode::Train) {
    xhat.resize(x.numel());
    for (std::size_t c = 0; c < channels; ++c) {
      const T* row = in.data() + c * inner;
      T m = 0;
      for (std::size_t i = 0; i < inner; ++i) m += row[i];
      m /= static_cast<T>(inner);
      T v = 0;
      for (std::size_t i = 0; i < inner; ++i) v += (row[i] - m) * (row[i] - m);
      v /= static_cast<T>(inner);
      inv_std[c] = T(1) / std::sqrt(v + epsilon);
      for (std::size_t i = 0; i < inner; ++i) {
        xhat[c * inner + i] = (row[i] - m) * inv_std[c];
        o[c * inner + i] = xhat[c * inner + i] * scale[c] + shift[c];
      }
      const T unbiased = inner > 1 ? v * static_cast<T>(inner) / static_cast<T>(inner - 1) : v;
      running.mean[c] = (T(1) - running.momentum) * running.mean[c] + running.momentum * m;
      running.var[c] = (T(1) - running.momentum) * running.var[c] + running.momentum * unbiased;
    }
  } else {
    for (std::size_t c = 0; c < channels; ++c) {
      inv_std[c] = T(1) / std::sqrt(running.var[c] + epsilon);
      const T m = running.mean[c];
      for (std::size_t i = 0; i < inner; ++i)
        o[c * inner + i] = (in[c * inner + i] - m) * inv_std[c] * scale[c] + shift[c];
    }
  }
  const std::vector<T> eval_mean = mode == NormMode::Eval ? running.mean : std::vector<T>{};
  record<T>(out, "batch_norm", {x, scale, shift},
            [x, scale, shift, mode, channels, inner, inv_std = std::move(inv_std), xhat = std::move(xhat),
             eval_mean](const TensorImpl<T>& self) {
              const auto& g = self.grad;
              T* gx = grad_ptr(x);
              T* gs = grad_ptr(scale);
              T* gb = grad_ptr(shift);
              auto in = x.data();
              for (std::size_t c = 0; c < channels; ++c) {
                const T* gr = g.data() + c * inner;
                T sum_g = 0, sum_g_xhat = 0;
                for (std::size_t i = 0; i < inner; ++i) {
                  const T xh = mode == NormMode::Train ? xhat[c * inner + i]
                                                       : (in[c * inner + i] - eval_mean[c]) * inv_std[c];
                  sum_g += gr[i];
                  sum_g_xhat += gr[i] * xh;
                }
                if (gs) gs[c] += sum_g_xhat;
                if (gb) gb[c] += sum_g;
                if (!gx) continue;
                const T gamma = scale[c];
                if (mode == NormMode::Train) {
                  const T n = static_cast<T>(inner);
                  const T k = gamma * inv_std[c] / n;
                  for (std::size_t i = 0; i < inner; ++i) {
                    gx[c * inner + i] += k * (n * gr[i] - sum_g - xhat[c * inner + i] * sum_g_xhat);
                  }
                } else {
                  const T k = gamma * inv_std[c];
                  for (std::size_t i = 0; i < inner; ++i) gx[c * inner + i] += k * gr[i];
                }
              }
            });
  return out;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& shift, T epsilon) {
  require(epsilon > T(0), "layer_norm: epsilon must be positive");
  const std::size_t features = x.dim(x.rank() - 1);
  require(scale.numel() == features && shift.numel() == features,
          "layer_norm: scale/shift length does not match feature extent " + std::to_string(features));
  const std::size_t rows = x.numel() / features;
  auto in = x.data();
  Tensor<T> out(x.shape());
  auto o = out.data();
  std::vector<T> xhat(x.numel());
  std::vector<T> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = in.data() + r * features;
    T m = 0;
    for (std::size_t j = 0; j < features; ++j) m += row[j];
    m /= static_cast<T>(features);
    T v = 0;
    for (std::size_t j = 0; j < features; ++j) v += (row[j] - m) * (row[j] - m);
    v /= static_cast<T>(features);
    inv_std[r] = T(1) / std::sqrt(v + epsilon);
    for (std::size_t j = 0; j < features; ++j) {
      xhat[r * features + j] = (row[j] - m) * inv_std[r];
      o[r * features + j] = xhat[r * features + j] * scale[j] + shift[j];
    }
  }
  record<T>(out, "layer_norm", {x, scale, shift},
            [x, scale, shift, rows, features, xhat = std::move(xhat),
             inv_std = std::move(inv_std)](const TensorImpl<T>& self) {
              const auto& g = self.grad;
              T* gx = grad_ptr(x);
              T* gs = grad_ptr(scale);
              T* gb = grad_ptr(shift);
              const T n = static_cast<T>(features);
              for (std::size_t r = 0; r < rows; ++r) {
                const T* gr = g.data() + r * features;
                const T* xh = xhat.data() + r * features;
                T sum_gy = 0, sum_gy_xhat = 0;
                for (std::size_t j = 0; j < features; ++j) {
                  const T gy = gr[j] * scale[j];
                  sum_gy += gy;
                  sum_gy_xhat += gy * xh[j];
                  if (gs) gs[j] += gr[j] * xh[j];
                  if (gb) gb[j] += gr[j];
                }
                if (!gx) continue;
                const T k = inv_std[r] / n;
                for (std::size_t j = 0; j < features; ++j) {
                  gx[r * features + j] += k * (n * gr[j] * scale[j] - sum_gy - xh[j] * sum_gy_xhat);
                }
              }
            });
  return out;
}

// ---- losses -----------------------------------------------------------------

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<std::size_t>& targets) {
  require(logits.rank() <= 2, "cross_entropy: logits must be [N,K] or [K], got " + to_string(logits.shape()));
  const std::size_t rows = logits.rank() == 1 ? 1 : logits.dim(0);
  const std::size_t classes = logits.dim(logits.rank() - 1);
  require(targets.size() == rows, "cross_entropy: " + std::to_string(targets.size()) +
                                      " targets for " + std::to_string(rows) + " rows");
  std::vector<T> probs(logits.numel());
  auto in = logits.data();
  T loss = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    require(targets[r] < classes, "cross_entropy: target " + std::to_string(targets[r]) +
                                      " out of range for " + std::to_string(classes) + " classes");
    const T* row = in.data() + r * classes;
    const T mx = *std::max_element(row, row + classes);
    T total = 0;
    for (std::size_t k = 0; k < classes; ++k) {
      probs[r * classes + k] = std::exp(row[k] - mx);
      total += probs[r * classes + k];
    }
    for (std::size_t k = 0; k < classes; ++k) probs[r * classes + k] /= total;
    loss += (mx + std::log(total)) - row[targets[r]];
  }
  Tensor<T> out(Shape{1}, loss / static_cast<T>(rows));
  record<T>(out, "cross_entropy", {logits},
            [logits, targets, rows, classes, probs = std::move(probs)](const TensorImpl<T>& self) {
              T* gl = grad_ptr(logits);
              if (!gl) return;
              const T g = self.grad[0] / static_cast<T>(rows);
              for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t k = 0; k < classes; ++k) {
                  const T onehot = k == targets[r] ? T(1) : T(0);
                  gl[r * classes + k] += g * (probs[r * classes + k] - onehot);
                }
            });
  return out;
}

#define STAN_INSTANTIATE_OPS(T)                                                                        \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                                    \
  template Tensor<T> gelu<T>(const Tensor<T>&);                                                        \
  template Tensor<T> relu<T>(const Tensor<T>&);                                                        \
  template Tensor<T> add_channel_bias<T>(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> sum<T>(const Tensor<T>&);                                                         \
  template Tensor<T> mean<T>(const Tensor<T>&);                                                        \
  template Tensor<T> avg_pool_all<T>(const Tensor<T>&);                                                \
  template Tensor<T> pick<T>(const Tensor<T>&, std::size_t);                                           \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                              \
  template Tensor<T> permute<T>(const Tensor<T>&, const std::vector<std::size_t>&);                    \
  template Tensor<T> narrow<T>(const Tensor<T>&, std::size_t, std::size_t);                            \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> softmax<T>(const Tensor<T>&, std::size_t);                                        \
  template Tensor<T> conv3d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,                   \
                               const Conv3dOptions&);                                                  \
  template Tensor<T> max_pool3d<T>(const Tensor<T>&, Triple);                                          \
  template Tensor<T> tile_frames<T>(const Tensor<T>&, std::size_t, std::size_t);                       \
  template Tensor<T> batch_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,               \
                                   BatchNormStats<T>&, NormMode, T);                                   \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);           \
  template Tensor<T> cross_entropy<T>(const Tensor<T>&, const std::vector<std::size_t>&);

STAN_INSTANTIATE_OPS(float)
STAN_INSTANTIATE_OPS(double)

}  // namespace stan
