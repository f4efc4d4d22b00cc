#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "hcam/parameters.hpp"
#include "hcam/tape.hpp"

namespace hcam {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Denominator floor of the relative error |a - n| / max(|a|, |n|, floor),
  /// so entries whose true gradient is ~0 are judged on absolute error.
  double floor = 1e-3;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t entries_checked = 0;

  bool passed(double tolerance) const { return max_relative_error < tolerance; }
};

double gradient_relative_error(double analytic, double numeric, double floor);

/// Builds a scalar loss from leaf inputs recorded on a fresh tape.
using LossBuilder = std::function<Var(Tape&, std::span<const Var>)>;

/// Central finite differences against reverse-mode gradients for every
/// entry of every input.
GradCheckResult check_gradients(const LossBuilder& build,
                                std::vector<Tensor> inputs,
                                const GradCheckOptions& options = {});

/// Same check, perturbing the values of `params` in place (restored after).
/// The builder must bind parameters with Tape::param.
GradCheckResult check_parameter_gradients(ParameterSet& params,
                                          const std::function<Var(Tape&)>& build,
                                          const GradCheckOptions& options = {});

}  // namespace hcam
