#include "hcam/parameters.hpp"

#include <cmath>

#include "hcam/errors.hpp"
#include "hcam/random.hpp"

namespace hcam {

Parameter& ParameterSet::add(std::string name, Tensor init) {
  if (find(name) != nullptr) {
    throw ContractError("duplicate parameter name '" + name + "'");
  }
  params_.push_back(Parameter{std::move(name), std::move(init)});
  return params_.back();
}

Parameter* ParameterSet::find(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

const Parameter* ParameterSet::find(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

std::size_t ParameterSet::index_of(const Parameter& p) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (&params_[i] == &p) return i;
  }
  throw ContractError("parameter '" + p.name + "' does not belong to this set");
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void ParameterSet::round_to_float() {
  for (auto& p : params_) {
    for (auto& v : p.value.values()) v = static_cast<double>(static_cast<float>(v));
  }
}

std::vector<Tensor> ParameterSet::snapshot() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.value);
  return out;
}

void ParameterSet::restore(const std::vector<Tensor>& values) {
  if (values.size() != params_.size()) {
    throw DimensionError("restore expects " + std::to_string(params_.size()) +
                         " tensors, got " + std::to_string(values.size()));
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i].shape() != params_[i].value.shape()) {
      throw DimensionError("restore shape mismatch for '" + params_[i].name +
                           "': " + to_string(params_[i].value.shape()) +
                           " vs " + to_string(values[i].shape()));
    }
    params_[i].value = values[i];
  }
}

namespace init {

Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return uniform(Shape{fan_in, fan_out}, bound, rng);
}

Tensor uniform(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(-bound, bound);
  return t;
}

Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }

Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }

}  // namespace init

}  // namespace hcam
