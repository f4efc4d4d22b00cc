#pragma once

#include <cstddef>
#include <deque>
#include <string>
#include <vector>

#include "hcam/tensor.hpp"

namespace hcam {

class Rng;

struct Parameter {
  std::string name;
  Tensor value;
};

/// Ordered, address-stable collection of named trainable tensors.
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet&) = delete;
  ParameterSet& operator=(const ParameterSet&) = delete;
  ParameterSet(ParameterSet&&) = default;
  ParameterSet& operator=(ParameterSet&&) = default;

  Parameter& add(std::string name, Tensor init);

  std::size_t size() const noexcept { return params_.size(); }
  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;
  std::size_t index_of(const Parameter& p) const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::size_t scalar_count() const;
  /// Rounds every value to the nearest 32-bit float.
  void round_to_float();
  std::vector<Tensor> snapshot() const;
  void restore(const std::vector<Tensor>& values);

 private:
  std::deque<Parameter> params_;
};

namespace init {

/// Uniform in [-s, s] with s = sqrt(6 / (fan_in + fan_out)).
Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);
Tensor uniform(Shape shape, double bound, Rng& rng);
Tensor zeros(Shape shape);
Tensor ones(Shape shape);

}  // namespace init

}  // namespace hcam
