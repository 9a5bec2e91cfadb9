#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "devae/tape.hpp"

namespace devae::nn {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::uint64_t step = 0;

  /// Zero accumulators shaped like `params`.
  static AdamState zeros_like(std::span<Parameter* const> params);
};

/// One bias-corrected Adam update using each parameter's accumulated grad.
void adam_step(std::span<Parameter* const> params, AdamState& state, const AdamConfig& config = {});

}  // namespace devae::nn
