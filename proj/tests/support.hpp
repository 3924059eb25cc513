#pragma once

#include <functional>
#include <string>
#include <vector>

#include "muan/autograd.hpp"
#include "muan/grad_check.hpp"
#include "muan/params.hpp"
#include "muan/rng.hpp"
#include "muan/tensor.hpp"

namespace muan::test {

inline Tensor random_tensor(Shape shape, RngStream& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.span()) v = rng.uniform(lo, hi);
  return t;
}

inline std::vector<bool> all_valid(std::size_t n) { return std::vector<bool>(n, true); }

using LossBuilder = std::function<Var(Tape&, const Binder&)>;

// Analytic gradients of `loss` against central differences for every
// parameter in `params`.
inline GradCheckReport check_parameter_gradients(ParameterSet& params, const LossBuilder& loss,
                                                 double tolerance = 1e-4, double floor = 1e-6) {
  std::vector<Tensor> analytic = params.zero_grads();
  {
    Tape tape;
    Binder bind(tape, params);
    tape.backward(loss(tape, bind));
    tape.accumulate_parameter_grads(analytic);
  }
  std::vector<Tensor*> targets;
  std::vector<std::string> names;
  for (Parameter& p : params) {
    targets.push_back(&p.value);
    names.push_back(p.name);
  }
  const std::vector<Tensor> numeric = finite_diff_grad(
      [&] {
        Tape tape;
        Binder bind(tape, params);
        return loss(tape, bind).value().item();
      },
      targets, 1e-5);
  return compare_gradients(analytic, numeric, names, tolerance, floor);
}

inline std::string describe(const GradCheckReport& r) {
  return "checked " + std::to_string(r.checked) + ", worst " + r.worst.parameter + "[" +
         std::to_string(r.worst.index) + "] analytic " + std::to_string(r.worst.analytic) + " numeric " +
         std::to_string(r.worst.numeric) + " rel " + std::to_string(r.worst_relative);
}

}  // namespace muan::test
