#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dsen/tensor.hpp"

namespace dsen::ad {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moment estimates for one parameter list. The list passed to adam_step
/// must keep the same order and shapes for the state's lifetime.
struct AdamState {
  std::size_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

/// One bias-corrected Adam update. Parameters with no gradient are treated
/// as having a zero gradient.
void adam_step(std::span<Tensor> params, AdamState& state, const AdamConfig& cfg);

void zero_grads(std::span<Tensor> params);

}  // namespace dsen::ad
