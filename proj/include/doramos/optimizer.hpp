#pragma once

#include <cmath>
#include <cstddef>

#include "doramos/error.hpp"
#include "doramos/params.hpp"

namespace doramos {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  ParamStore m;
  ParamStore v;
  std::size_t step = 0;

  static AdamState for_params(const ParamStore& params) { return {params.zeros_like(), params.zeros_like(), 0}; }
};

// One bias-corrected Adam update, in place.
inline void adam_step(ParamStore& params, const ParamStore& grads, AdamState& state, double lr,
                      const AdamConfig& cfg = {}) {
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (auto& [name, p] : params) {
    const Tensor& g = grads.at(name);
    Tensor& m = state.m.at(name);
    Tensor& v = state.v.at(name);
    if (g.size() != p.size()) throw ShapeError("adam_step: gradient shape mismatch for " + name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
    }
  }
}

}  // namespace doramos
