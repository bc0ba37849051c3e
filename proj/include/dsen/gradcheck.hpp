#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dsen/tensor.hpp"

namespace dsen::ad {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Coordinates where the left and right one-sided differences disagree by
  /// more than this (relative) sit on a kink and are reported, not judged.
  double kink_tolerance = 1e-2;
  /// Check at most this many coordinates per input (0 = all), chosen evenly.
  std::size_t max_coords_per_input = 0;
};

struct GradCheckPoint {
  std::size_t input = 0;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  bool passed = true;
  std::size_t checked = 0;
  std::vector<GradCheckPoint> excluded;
  GradCheckPoint worst;
};

/// rel = |a - n| / max(|a|, |n|, 1e-6).
double grad_rel_error(double analytic, double numeric);

/// Compares reverse-mode gradients of the scalar f(inputs) against central
/// differences. Inputs must be leaves with requires_grad set.
GradCheckReport grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f, std::vector<Tensor> inputs,
                           const GradCheckOptions& opts = {});

}  // namespace dsen::ad
