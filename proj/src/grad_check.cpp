#include "muan/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace muan {

std::vector<Tensor> finite_diff_grad(const std::function<double()>& f, std::span<Tensor* const> params, double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) throw ContractError("finite_diff_grad: eps must lie in [1e-7, 1e-3]");
  std::vector<Tensor> grads;
  grads.reserve(params.size());
  for (Tensor* p : params) {
    Tensor g(p->shape());
    for (std::size_t i = 0; i < p->numel(); ++i) {
      const double saved = (*p)[i];
      (*p)[i] = saved + eps;
      const double up = f();
      (*p)[i] = saved - eps;
      const double down = f();
      (*p)[i] = saved;
      g[i] = (up - down) / (2.0 * eps);
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

double relative_error(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

GradCheckReport compare_gradients(std::span<const Tensor> analytic, std::span<const Tensor> numeric,
                                  std::span<const std::string> names, double tolerance, double magnitude_floor) {
  if (analytic.size() != numeric.size() || analytic.size() != names.size()) {
    throw DimensionError("compare_gradients: gradient lists differ in length");
  }
  GradCheckReport report;
  for (std::size_t p = 0; p < analytic.size(); ++p) {
    require_same_shape(analytic[p], numeric[p], "compare_gradients");
    for (std::size_t i = 0; i < analytic[p].numel(); ++i) {
      const double a = analytic[p][i], n = numeric[p][i];
      if (std::max(std::abs(a), std::abs(n)) <= magnitude_floor) {
        ++report.skipped;
        continue;
      }
      ++report.checked;
      const double rel = relative_error(a, n);
      GradientMismatch m{names[p], i, a, n, rel};
      if (rel > report.worst_relative) {
        report.worst_relative = rel;
        report.worst = m;
      }
      if (!(rel <= tolerance)) report.failures.push_back(m);
    }
  }
  return report;
}

}  // namespace muan
