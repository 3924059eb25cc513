#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "muan/tensor.hpp"

namespace muan {

/// Central-difference gradient of a scalar function of `params`, one
/// coordinate at a time: (f(p + eps e_i) - f(p - eps e_i)) / (2 eps).
/// `f` reads the tensors in place, so it must be deterministic (no dropout).
/// Every coordinate is restored exactly after probing.
std::vector<Tensor> finite_diff_grad(const std::function<double()>& f, std::span<Tensor* const> params,
                                     double eps = 1e-5);

// |a - b| / max(|a|, |b|), zero when both vanish.
double relative_error(double a, double b);

struct GradientMismatch {
  std::string parameter;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double relative = 0.0;
};

struct GradCheckReport {
  std::size_t checked = 0;
  std::size_t skipped = 0;  // coordinates with |grad| <= floor
  double worst_relative = 0.0;
  GradientMismatch worst;
  std::vector<GradientMismatch> failures;
  bool passed() const { return failures.empty(); }
};

GradCheckReport compare_gradients(std::span<const Tensor> analytic, std::span<const Tensor> numeric,
                                  std::span<const std::string> names, double tolerance = 1e-4,
                                  double magnitude_floor = 1e-6);

}  // namespace muan
