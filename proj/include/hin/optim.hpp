#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "hin/errors.hpp"
#include "hin/params.hpp"

namespace hin {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const {
    if (!(lr >= 0.0 && std::isfinite(lr))) throw ConfigError("adam: learning rate must be finite and >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("adam: beta1 must lie in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("adam: beta2 must lie in [0, 1)");
    if (!(eps > 0.0)) throw ConfigError("adam: epsilon must be > 0");
  }
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::size_t t = 0;

  AdamState() = default;
  explicit AdamState(const ParameterSet& params) {
    for (const Parameter& p : params) {
      m.emplace_back(p.value.shape());
      v.emplace_back(p.value.shape());
    }
  }
};

// One Adam update with bias correction over every trainable parameter.
// Gradients must have been produced for each of them (same shape as the
// value); frozen parameters are skipped entirely.
inline void adam_step(ParameterSet& params, AdamState& state, const AdamConfig& cfg) {
  cfg.validate();
  if (state.m.size() != params.size()) {
    throw DimensionError("adam_step: state tracks " + std::to_string(state.m.size()) + " tensors, model has " +
                         std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter& p = params[i];
    if (p.frozen) continue;
    if (p.grad.shape() != p.value.shape()) {
      throw Error("adam_step: missing gradient for trainable parameter '" + p.name + "'");
    }
  }
  ++state.t;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    if (p.frozen) continue;
    auto value = p.value.data();
    auto grad = p.grad.data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    for (std::size_t j = 0; j < value.size(); ++j) {
      const double g = grad[j];
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
      const double m_hat = m[j] / c1;
      const double v_hat = v[j] / c2;
      value[j] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
}

}  // namespace hin
