#pragma once

#include <cstddef>
#include <vector>

#include "muan/params.hpp"

namespace muan {

struct AdamState {
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::size_t step_count = 0;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double epsilon = 1e-8;

  static AdamState for_parameters(const ParameterSet& params, double beta1 = 0.9, double beta2 = 0.99,
                                  double epsilon = 1e-8);
};

/// One bias-corrected Adam update of every parameter. All gradients are
/// checked before anything is written: a NaN or infinite entry raises
/// DivergenceError naming the parameter and leaves params and state intact.
void adam_step(ParameterSet& params, const std::vector<Tensor>& grads, AdamState& state, double lr);

}  // namespace muan
