#include "hcam/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace hcam {

double gradient_relative_error(double analytic, double numeric, double floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

namespace {

void record(GradCheckResult& result, std::size_t input, std::size_t index,
            double analytic, double numeric, const GradCheckOptions& options) {
  const double rel = gradient_relative_error(analytic, numeric, options.floor);
  result.max_absolute_error =
      std::max(result.max_absolute_error, std::abs(analytic - numeric));
  result.entries_checked += 1;
  if (rel >= result.max_relative_error) {
    result.max_relative_error = rel;
    result.worst_input = input;
    result.worst_index = index;
    result.worst_analytic = analytic;
    result.worst_numeric = numeric;
  }
}

}  // namespace

GradCheckResult check_gradients(const LossBuilder& build, std::vector<Tensor> inputs,
                                const GradCheckOptions& options) {
  auto evaluate = [&](bool with_grads, std::vector<Tensor>* grads) {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (const auto& t : inputs) vars.push_back(tape.leaf(t));
    Var loss = build(tape, vars);
    if (with_grads) {
      Gradients g = tape.backward(loss);
      for (const auto& v : vars) grads->push_back(g.of(v));
    }
    return loss.value().item();
  };

  std::vector<Tensor> analytic;
  evaluate(true, &analytic);

  GradCheckResult result;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t j = 0; j < inputs[i].size(); ++j) {
      const double original = inputs[i][j];
      inputs[i][j] = original + options.step;
      const double plus = evaluate(false, nullptr);
      inputs[i][j] = original - options.step;
      const double minus = evaluate(false, nullptr);
      inputs[i][j] = original;
      const double numeric = (plus - minus) / (2.0 * options.step);
      record(result, i, j, analytic[i][j], numeric, options);
    }
  }
  return result;
}

GradCheckResult check_parameter_gradients(ParameterSet& params,
                                          const std::function<Var(Tape&)>& build,
                                          const GradCheckOptions& options) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    Var loss = build(tape);
    analytic = tape.backward(loss).of(params);
  }
  auto loss_value = [&] {
    Tape tape;
    return build(tape).value().item();
  };
  GradCheckResult result;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& value = params[i].value;
    for (std::size_t j = 0; j < value.size(); ++j) {
      const double original = value[j];
      value[j] = original + options.step;
      const double plus = loss_value();
      value[j] = original - options.step;
      const double minus = loss_value();
      value[j] = original;
      const double numeric = (plus - minus) / (2.0 * options.step);
      record(result, i, j, analytic[i][j], numeric, options);
    }
  }
  return result;
}

}  // namespace hcam
