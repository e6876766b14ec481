#include "stan/train/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace stan {

template <typename T>
void adamw_step(std::span<T> params, std::span<const T> grads, AdamWState& state, double lr,
                const AdamWConfig& config, bool decay) {
  if (params.size() != grads.size()) throw std::invalid_argument("adamw_step: parameter/gradient size mismatch");
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  ++state.step;
  const double b1 = config.beta1, b2 = config.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  const double shrink = decay ? 1.0 - lr * config.weight_decay : 1.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = static_cast<double>(grads[i]);
    state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
    state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
    const double m_hat = state.m[i] / c1, v_hat = state.v[i] / c2;
    double p = static_cast<double>(params[i]) * shrink;
    p -= lr * m_hat / (std::sqrt(v_hat) + config.epsilon);
    params[i] = static_cast<T>(p);
  }
}

double CosineSchedule::lr_at(double epoch) const {
  if (epoch < 0.0) return 0.0;
  if (epoch < warmup_epochs) return base_lr * epoch / warmup_epochs;
  if (epoch >= total_epochs) return 0.0;
  const double progress = (epoch - warmup_epochs) / (total_epochs - warmup_epochs);
  return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename T>
void AdamW<T>::step(ParameterSet<T>& params, double lr) {
  auto& entries = params.entries();
  if (states_.size() != entries.size()) states_.assign(entries.size(), AdamWState{});
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& p = entries[i];
    if (!p.tensor.has_grad()) continue;
    adamw_step<T>(p.tensor.data(), p.tensor.grad(), states_[i], lr, config_, p.decay);
  }
  ++steps_;
}

template <typename T>
double clip_grad_norm(ParameterSet<T>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params.entries())
    for (T g : p.tensor.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const T factor = static_cast<T>(max_norm / norm);
    for (auto& p : params.entries())
      if (p.tensor.has_grad())
        for (T& g : p.tensor.mutable_grad()) g *= factor;
  }
  return norm;
}

template void adamw_step<float>(std::span<float>, std::span<const float>, AdamWState&, double, const AdamWConfig&,
                                bool);
template void adamw_step<double>(std::span<double>, std::span<const double>, AdamWState&, double,
                                 const AdamWConfig&, bool);
template class AdamW<float>;
template class AdamW<double>;
template double clip_grad_norm<float>(ParameterSet<float>&, double);
template double clip_grad_norm<double>(ParameterSet<double>&, double);

}  // namespace stan
