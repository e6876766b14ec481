#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "stan/model/parameters.hpp"

namespace stan {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.05;
};

struct AdamWState {
  std::vector<double> m;
  std::vector<double> v;
  std::size_t step = 0;
};

// One AdamW update of a flat parameter block: decoupled decay (when `decay`)
// followed by the bias-corrected Adam step.
template <typename T>
void adamw_step(std::span<T> params, std::span<const T> grads, AdamWState& state, double lr,
                const AdamWConfig& config, bool decay = true);

// Linear warmup from 0 to `base_lr`, then cosine decay to 0 at `total_epochs`.
struct CosineSchedule {
  double base_lr = 1e-3;
  double warmup_epochs = 2;
  double total_epochs = 30;

  double lr_at(double epoch) const;
};

template <typename T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig config) : config_(config) {}

  // Applies one step to every parameter that has an accumulated gradient.
  void step(ParameterSet<T>& params, double lr);
  std::size_t steps() const { return steps_; }

 private:
  AdamWConfig config_;
  std::vector<AdamWState> states_;
  std::size_t steps_ = 0;
};

// Rescales all gradients so their global L2 norm is at most `max_norm`;
// returns the norm before clipping.
template <typename T>
double clip_grad_norm(ParameterSet<T>& params, double max_norm);

}  // namespace stan
