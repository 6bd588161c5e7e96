#include "mmfuse/ndgrad/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mmfuse::ndgrad {

namespace {

double evaluate(const ScalarFn& f) {
  NoGradGuard no_grad;
  const double v = f().item();
  if (!std::isfinite(v)) throw NumericError("finite_diff_check: objective is not finite");
  return v;
}

}  // namespace

GradCheckResult finite_diff_check(const ScalarFn& f, std::vector<Tensor<double>> params,
                                  const std::vector<std::vector<double>>& analytic, double eps) {
  if (analytic.size() != params.size()) {
    throw std::invalid_argument("finite_diff_check: one analytic gradient per parameter");
  }
  double scale = 0.0;
  for (const auto& g : analytic)
    for (double v : g) scale = std::max(scale, std::abs(v));
  const double floor = std::max(kGradCheckFloor, kGradCheckRelativeFloor * scale);

  GradCheckResult result;
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto values = params[p].mutable_data();
    if (analytic[p].size() != values.size()) {
      throw DimensionError("finite_diff_check: analytic gradient size mismatch");
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = evaluate(f);
      values[i] = saved - eps;
      const double down = evaluate(f);
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[p][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      const double rel = std::abs(a - numeric) / denom;
      ++result.checked;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_param = p;
        result.worst_index = i;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

GradCheckResult finite_diff_check(const ScalarFn& f, std::vector<Tensor<double>> params,
                                  double eps) {
  for (auto& p : params) p.zero_grad();
  Tensor<double> loss = f();
  if (!std::isfinite(loss.item())) throw NumericError("finite_diff_check: objective is not finite");
  loss.backward();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) {
    if (p.has_grad()) {
      analytic.emplace_back(p.grad().begin(), p.grad().end());
    } else {
      analytic.emplace_back(p.numel(), 0.0);
    }
  }
  return finite_diff_check(f, std::move(params), analytic, eps);
}

}  // namespace mmfuse::ndgrad
