#include "hcam/adam.hpp"

#include <cmath>

#include "hcam/errors.hpp"

namespace hcam {

AdamState AdamState::for_parameters(const ParameterSet& params, AdamConfig config) {
  AdamState state;
  state.config = config;
  for (const auto& p : params) {
    state.first_moment.push_back(Tensor::zeros_like(p.value));
    state.second_moment.push_back(Tensor::zeros_like(p.value));
  }
  return state;
}

void adam_step(ParameterSet& params, const std::vector<Tensor>& grads,
               AdamState& state) {
  if (grads.size() != params.size() || state.first_moment.size() != params.size()) {
    throw DimensionError("adam_step: " + std::to_string(params.size()) +
                         " parameters, " + std::to_string(grads.size()) +
                         " gradients, " + std::to_string(state.first_moment.size()) +
                         " moment slots");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Shape& shape = params[i].value.shape();
    if (grads[i].shape() != shape || state.first_moment[i].shape() != shape) {
      throw DimensionError("adam_step shape mismatch for '" + params[i].name +
                           "': parameter " + to_string(shape) + ", gradient " +
                           to_string(grads[i].shape()));
    }
  }
  const AdamConfig& c = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double correct1 = 1.0 - std::pow(c.beta1, t);
  const double correct2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i].value;
    Tensor& m = state.first_moment[i];
    Tensor& v = state.second_moment[i];
    const Tensor& g = grads[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
      const double m_hat = m[j] / correct1;
      const double v_hat = v[j] / correct2;
      p[j] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
    }
  }
}

}  // namespace hcam
