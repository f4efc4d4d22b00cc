#pragma once

#include <cstdint>
#include <vector>

#include "hcam/parameters.hpp"

namespace hcam {

struct AdamConfig {
  double learning_rate = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::uint64_t step = 0;

  /// Zero moments shaped like `params`.
  static AdamState for_parameters(const ParameterSet& params, AdamConfig config = {});
};

/// One bias-corrected Adam update of every parameter in `params`.
void adam_step(ParameterSet& params, const std::vector<Tensor>& grads,
               AdamState& state);

}  // namespace hcam
