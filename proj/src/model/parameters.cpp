#include "stan/model/parameters.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace stan {

template <typename T>
Tensor<T> ParameterSet<T>::add(std::string name, Shape shape, bool decay) {
  for (const auto& p : params_)
    if (p.name == name) throw std::logic_error("duplicate parameter name " + name);
  Tensor<T> t(std::move(shape), T(0), true);
  params_.push_back({std::move(name), t, decay});
  return t;
}

template <typename T>
BatchNormStats<T>& ParameterSet<T>::add_batch_norm(std::string name, std::size_t channels, T momentum) {
  auto& s = stats_.emplace_back();
  s.mean.assign(channels, T(0));
  s.var.assign(channels, T(1));
  s.momentum = momentum;
  buffers_.push_back({std::move(name), &s});
  return s;
}

template <typename T>
Tensor<T> ParameterSet<T>::get(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return p.tensor;
  throw std::out_of_range("no parameter named " + name);
}

template <typename T>
BatchNormStats<T>& ParameterSet<T>::buffer(const std::string& name) const {
  for (const auto& b : buffers_)
    if (b.name == name) return *b.stats;
  throw std::out_of_range("no buffer named " + name);
}

template <typename T>
std::size_t ParameterSet<T>::count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

template <typename T>
void ParameterSet<T>::set_requires_grad(bool on) {
  for (auto& p : params_) p.tensor.set_requires_grad(on);
}

template <typename T>
void ParameterSet<T>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

namespace {
void fnv_mix(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= 1099511628211ULL;
  }
}
}  // namespace

template <typename T>
std::uint64_t ParameterSet<T>::checksum() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& p : params_) fnv_mix(h, p.tensor.data().data(), p.tensor.numel() * sizeof(T));
  for (const auto& b : buffers_) {
    fnv_mix(h, b.stats->mean.data(), b.stats->mean.size() * sizeof(T));
    fnv_mix(h, b.stats->var.data(), b.stats->var.size() * sizeof(T));
  }
  return h;
}

template <typename T>
void fill_truncated_normal(Tensor<T>& t, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.data()) {
    double x;
    do {
      x = dist(rng);
    } while (std::abs(x) > 2.0 * stddev);
    v = static_cast<T>(x);
  }
}

template <typename T>
void fill_fan_in_normal(Tensor<T>& t, std::size_t fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(fan_in)));
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
}

template <typename T>
void fill_constant(Tensor<T>& t, T value) {
  for (auto& v : t.data()) v = value;
}

template class ParameterSet<float>;
template class ParameterSet<double>;
template void fill_truncated_normal<float>(Tensor<float>&, double, std::mt19937_64&);
template void fill_truncated_normal<double>(Tensor<double>&, double, std::mt19937_64&);
template void fill_fan_in_normal<float>(Tensor<float>&, std::size_t, std::mt19937_64&);
template void fill_fan_in_normal<double>(Tensor<double>&, std::size_t, std::mt19937_64&);
template void fill_constant<float>(Tensor<float>&, float);
template void fill_constant<double>(Tensor<double>&, double);

}  // namespace stan
