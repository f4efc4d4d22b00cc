#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "hcam/parameters.hpp"
#include "hcam/tensor.hpp"

namespace hcam {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid as long as
/// the tape is alive; value() references stay valid as the tape grows.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  explicit operator bool() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Receives the output gradient and one slot per input. A slot is null when
/// that input does not require a gradient; otherwise the function must
/// accumulate (+=) into it.
using BackwardFn =
    std::function<void(const Tensor& grad_out, std::span<Tensor* const> grad_in)>;

class Gradients;

/// Append-only record of differentiable operations. Nodes are stored in
/// creation order, so every node's inputs precede it.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that never receives a gradient.
  Var constant(Tensor value);
  /// Leaf that receives a gradient.
  Var leaf(Tensor value);
  /// Leaf bound to a trainable parameter. Repeated calls return the same node.
  Var param(const Parameter& p);

  Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

  /// Reverse-mode sweep from a scalar loss.
  Gradients backward(Var loss) const;

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  friend class Gradients;

  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var push(Node node);

  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> params_;
};

/// Gradient map produced by Tape::backward. Only leaves (parameters,
/// leaf() inputs) keep their gradients; leaves the loss does not reach
/// report zeros of the right shape.
class Gradients {
 public:
  Tensor of(Var v) const;
  Tensor of(const Parameter& p) const;
  /// Gradients for every parameter of a set, in set order.
  std::vector<Tensor> of(const ParameterSet& params) const;

 private:
  friend class Tape;
  explicit Gradients(const Tape& tape) : tape_(&tape) {}

  const Tape* tape_;
  std::vector<Tensor> grads_;
  std::vector<bool> present_;
};

}  // namespace hcam
