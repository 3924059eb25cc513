#include "muan/optim.hpp"

#include <cmath>
#include <string>

namespace muan {

AdamState AdamState::for_parameters(const ParameterSet& params, double beta1, double beta2, double epsilon) {
  AdamState s;
  s.first_moment = params.zero_grads();
  s.second_moment = params.zero_grads();
  s.beta1 = beta1;
  s.beta2 = beta2;
  s.epsilon = epsilon;
  return s;
}

void adam_step(ParameterSet& params, const std::vector<Tensor>& grads, AdamState& state, double lr) {
  if (!(lr > 0.0)) throw ContractError("adam_step: learning rate must be positive");
  if (grads.size() != params.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size()) {
    throw DimensionError("adam_step: gradient/state count does not match parameter count");
  }
  for (std::size_t p = 0; p < params.size(); ++p) {
    require_same_shape(params[p].value, grads[p], "adam_step gradient");
    require_same_shape(params[p].value, state.first_moment[p], "adam_step first moment");
    require_same_shape(params[p].value, state.second_moment[p], "adam_step second moment");
    for (double g : grads[p].values()) {
      if (!std::isfinite(g)) throw DivergenceError("non-finite gradient in parameter '" + params[p].name + "'");
    }
  }
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& w = params[p].value;
    Tensor& m = state.first_moment[p];
    Tensor& v = state.second_moment[p];
    const Tensor& g = grads[p];
    for (std::size_t i = 0; i < w.numel(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

}  // namespace muan
