#include "devae/adam.hpp"

#include <cmath>

#include "devae/errors.hpp"

namespace devae::nn {

AdamState AdamState::zeros_like(std::span<Parameter* const> params) {
  AdamState state;
  for (const Parameter* p : params) {
    state.first_moment.emplace_back(p->value.shape());
    state.second_moment.emplace_back(p->value.shape());
  }
  return state;
}

void adam_step(std::span<Parameter* const> params, AdamState& state, const AdamConfig& config) {
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size()) {
    throw UsageError("adam_step: optimizer state does not match parameter list");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(config.beta1, t);
  const double correction2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    Tensor& m = state.first_moment[k];
    Tensor& v = state.second_moment[k];
    if (p.grad.shape() != p.value.shape() || m.shape() != p.value.shape()) {
      throw UsageError("adam_step: gradient or moment shape mismatch for " + p.name);
    }
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      p.value[i] -= config.lr * m_hat / (std::sqrt(v_hat) + config.eps);
    }
  }
}

}  // namespace devae::nn
