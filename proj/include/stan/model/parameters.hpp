#pragma once

#include <cstdint>
#include <deque>
#include <random>
#include <string>
#include <vector>

#include "stan/ops.hpp"
#include "stan/tensor.hpp"

namespace stan {

template <typename T>
struct NamedParameter {
  std::string name;
  Tensor<T> tensor;
  bool decay = true;  // receives decoupled weight decay
};

template <typename T>
struct NamedBuffer {
  std::string name;
  BatchNormStats<T>* stats;
};

// Ordered registry of a model's trainable tensors and normalization buffers.
// Registration order is the serialization and initialization order.
template <typename T>
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet&) = delete;
  ParameterSet& operator=(const ParameterSet&) = delete;
  ParameterSet(ParameterSet&&) = default;
  ParameterSet& operator=(ParameterSet&&) = default;

  Tensor<T> add(std::string name, Shape shape, bool decay);
  BatchNormStats<T>& add_batch_norm(std::string name, std::size_t channels, T momentum);

  std::vector<NamedParameter<T>>& entries() { return params_; }
  const std::vector<NamedParameter<T>>& entries() const { return params_; }
  const std::vector<NamedBuffer<T>>& buffers() const { return buffers_; }

  Tensor<T> get(const std::string& name) const;
  BatchNormStats<T>& buffer(const std::string& name) const;

  std::size_t count() const;  // total scalar parameters
  void set_requires_grad(bool on);
  void zero_grad();
  // FNV-1a over parameter and buffer bytes.
  std::uint64_t checksum() const;

 private:
  std::vector<NamedParameter<T>> params_;
  std::deque<BatchNormStats<T>> stats_;
  std::vector<NamedBuffer<T>> buffers_;
};

// Initializers draw from one generator in registration order.
template <typename T>
void fill_truncated_normal(Tensor<T>& t, double stddev, std::mt19937_64& rng);
template <typename T>
void fill_fan_in_normal(Tensor<T>& t, std::size_t fan_in, std::mt19937_64& rng);
template <typename T>
void fill_constant(Tensor<T>& t, T value);

}  // namespace stan
