#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "mmfuse/ndgrad/tensor.hpp"

namespace mmfuse::ndgrad {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

// Floor on the denominator of the elementwise relative error:
// max(kGradCheckFloor, kGradCheckRelativeFloor * largest |analytic| entry).
// Entries far below the gradient scale then compare by absolute difference,
// where central differences are dominated by rounding.
inline constexpr double kGradCheckFloor = 1e-6;
inline constexpr double kGradCheckRelativeFloor = 1e-4;

using ScalarFn = std::function<Tensor<double>()>;

// Compares `analytic` against central differences (f(p+eps) - f(p-eps)) / 2eps
// for every element of every parameter. Returns the worst
// |a - n| / max(|a|, |n|, floor).
GradCheckResult finite_diff_check(const ScalarFn& f, std::vector<Tensor<double>> params,
                                  const std::vector<std::vector<double>>& analytic,
                                  double eps = 1e-5);

// Zeroes the parameters' grads, runs one backward pass of f, then checks.
GradCheckResult finite_diff_check(const ScalarFn& f, std::vector<Tensor<double>> params,
                                  double eps = 1e-5);

}  // namespace mmfuse::ndgrad
