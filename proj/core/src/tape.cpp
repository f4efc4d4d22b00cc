#include "hcam/tape.hpp"

#include "hcam/errors.hpp"

namespace hcam {

const Tensor& Var::value() const {
  if (tape_ == nullptr) throw ContractError("value() on an unbound Var");
  return tape_->value(id_);
}

bool Var::requires_grad() const {
  return tape_ != nullptr && tape_->requires_grad(id_);
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  return push(Node{std::move(value), {}, false, nullptr});
}

Var Tape::leaf(Tensor value) {
  return push(Node{std::move(value), {}, true, nullptr});
}

Var Tape::param(const Parameter& p) {
  if (auto it = params_.find(&p); it != params_.end()) {
    return Var(this, it->second);
  }
  Var v = leaf(p.value);
  params_.emplace(&p, v.id());
  return v;
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  node.inputs.reserve(inputs.size());
  for (const auto& in : inputs) {
    if (in.tape() != this) {
      throw ContractError("operation mixes variables from different tapes");
    }
    node.inputs.push_back(in.id());
    node.requires_grad = node.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  return push(std::move(node));
}

Gradients Tape::backward(Var loss) const {
  if (loss.tape() != this) throw ContractError("loss belongs to another tape");
  if (loss.value().size() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " +
                        to_string(loss.shape()));
  }
  Gradients grads(*this);
  grads.grads_.resize(nodes_.size());
  grads.present_.assign(nodes_.size(), false);
  if (!nodes_[loss.id()].requires_grad) return grads;

  auto ensure = [&](std::size_t id) -> Tensor* {
    if (!grads.present_[id]) {
      grads.grads_[id] = Tensor::zeros_like(nodes_[id].value);
      grads.present_[id] = true;
    }
    return &grads.grads_[id];
  };
  ensure(loss.id())->fill(1.0);

  std::vector<Tensor*> slots;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    const Node& node = nodes_[id];
    if (!grads.present_[id] || !node.backward) continue;
    slots.assign(node.inputs.size(), nullptr);
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      if (nodes_[node.inputs[i]].requires_grad) slots[i] = ensure(node.inputs[i]);
    }
    node.backward(grads.grads_[id], slots);
    // Interior gradients are no longer needed once propagated.
    if (!node.inputs.empty() && id != loss.id()) {
      grads.grads_[id] = Tensor();
      grads.present_[id] = false;
    }
  }
  return grads;
}

Tensor Gradients::of(Var v) const {
  if (v.tape() != tape_) throw ContractError("variable belongs to another tape");
  if (!tape_->nodes_[v.id()].inputs.empty()) {
    throw ContractError("gradients are retained for leaf variables only");
  }
  if (v.id() < present_.size() && present_[v.id()]) return grads_[v.id()];
  return Tensor::zeros_like(v.value());
}

Tensor Gradients::of(const Parameter& p) const {
  if (auto it = tape_->params_.find(&p); it != tape_->params_.end()) {
    if (it->second < present_.size() && present_[it->second]) {
      return grads_[it->second];
    }
  }
  return Tensor::zeros_like(p.value);
}

std::vector<Tensor> Gradients::of(const ParameterSet& params) const {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(of(p));
  return out;
}

}  // namespace hcam
