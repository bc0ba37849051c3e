#include "dsen/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "dsen/error.hpp"

namespace dsen::ad {

double grad_rel_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f, std::vector<Tensor> inputs,
                           const GradCheckOptions& opts) {
  for (auto& x : inputs) {
    if (!x.requires_grad()) throw ShapeError("grad_check: every input must require gradients");
    x.zero_grad();
  }
  Tensor out = f(inputs);
  if (out.size() != 1) throw ShapeError("grad_check: function must return a scalar");
  out.backward();
  std::vector<std::vector<double>> analytic;
  for (const auto& x : inputs) {
    analytic.emplace_back(x.has_grad() ? std::vector<double>(x.grad().begin(), x.grad().end())
                                       : std::vector<double>(x.size(), 0.0));
  }

  auto eval = [&]() {
    NoGradGuard guard;
    return f(inputs).item();
  };
  const double f0 = eval();

  GradCheckReport report;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto vals = inputs[k].values_mut();
    const std::size_t n = vals.size();
    std::size_t stride = 1;
    if (opts.max_coords_per_input > 0 && n > opts.max_coords_per_input) {
      stride = (n + opts.max_coords_per_input - 1) / opts.max_coords_per_input;
    }
    for (std::size_t i = 0; i < n; i += stride) {
      const double orig = vals[i];
      vals[i] = orig + opts.step;
      const double fp = eval();
      vals[i] = orig - opts.step;
      const double fm = eval();
      vals[i] = orig;
      const double numeric = (fp - fm) / (2.0 * opts.step);
      const double right = (fp - f0) / opts.step;
      const double left = (f0 - fm) / opts.step;
      GradCheckPoint pt{k, i, analytic[k][i], numeric};
      if (grad_rel_error(left, right) > opts.kink_tolerance &&
          std::abs(left - right) > opts.kink_tolerance * 1e-2) {
        report.excluded.push_back(pt);
        continue;
      }
      ++report.checked;
      const double rel = grad_rel_error(analytic[k][i], numeric);
      if (rel > report.max_rel_error || report.checked == 1) {
        report.max_rel_error = rel;
        report.worst = pt;
      }
    }
  }
  report.passed = report.max_rel_error <= opts.tolerance;
  return report;
}

}  // namespace dsen::ad
