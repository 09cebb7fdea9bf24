#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include "alm/core/params.hpp"

namespace alm::core {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
};

/// First/second moment estimates, keyed like the ParameterStore.
template <typename T>
struct AdamState {
  std::map<std::string, Array<T>> m;
  std::map<std::string, Array<T>> v;
  std::uint64_t step = 0;
};

/// One bias-corrected Adam update over every parameter that has a gradient.
/// Parameters without a gradient are left untouched. A non-finite gradient
/// aborts the update before any parameter is modified.
template <typename T>
void adam_step(ParameterStore<T>& params, AdamState<T>& state, double lr, const AdamConfig& cfg = {}) {
  for (const auto& [name, p] : params) {
    if (!p.grad.all_finite()) throw NonFiniteGradient("non-finite gradient for parameter '" + name + "'");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& [name, p] : params) {
    if (p.grad.empty()) continue;
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.shape != p.value.shape || m.size() != p.value.size()) m = Array<T>(p.value.shape);
    if (v.shape != p.value.shape || v.size() != p.value.size()) v = Array<T>(p.value.shape);
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad.data[i];
      const double mi = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * g;
      const double vi = cfg.beta2 * v.data[i] + (1.0 - cfg.beta2) * g * g;
      m.data[i] = static_cast<T>(mi);
      v.data[i] = static_cast<T>(vi);
      const double update = lr * (mi / c1) / (std::sqrt(vi / c2) + cfg.eps);
      p.value.data[i] = static_cast<T>(p.value.data[i] - update);
    }
  }
}

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(ParameterStore<T>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& [_, p] : params)
    for (T g : p.grad.data) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const T factor = static_cast<T>(max_norm / (norm + 1e-12));
    for (auto& [_, p] : params)
      for (T& g : p.grad.data) g *= factor;
  }
  return norm;
}

}  // namespace alm::core
