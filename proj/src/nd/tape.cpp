#include "csp/nd/tape.hpp"

#include <stdexcept>

#include "csp/nd/params.hpp"

namespace csp::nd {

Var Tape::constant(Array value) {
  nodes_.push_back(Node{std::move(value), {}, {}, false, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Array value) {
  nodes_.push_back(Node{std::move(value), {}, {}, recording_, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(ParamStore& store, const std::string& name) {
  const auto key = std::make_pair(static_cast<const ParamStore*>(&store), name);
  if (auto it = param_ids_.find(key); it != param_ids_.end()) return Var(this, it->second);
  Param& p = store.at(name);
  Var v = variable(p.value);
  param_ids_.emplace(key, v.id());
  if (recording_) param_leaves_.push_back({v.id(), &p.grad});
  return v;
}

Array Tape::grad(Var v) const {
  const Node& node = nodes_[v.id()];
  if (node.has_grad) return node.grad;
  return Array(node.value.shape(), 0.0);
}

Array& Tape::grad_buffer(Var v) {
  Node& node = nodes_[v.id()];
  if (!node.has_grad) {
    node.grad = Array(node.value.shape(), 0.0);
    node.has_grad = true;
  }
  return node.grad;
}

Var Tape::push(Array value, const std::vector<Var>& parents, BackwardFn backward) {
  bool needs = false;
  if (recording_) {
    for (const Var& p : parents) {
      if (&p.tape() != this) throw std::logic_error("operands recorded on different tapes");
      needs = needs || nodes_[p.id()].requires_grad;
    }
  }
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : BackwardFn{}, needs, false});
  return Var(this, nodes_.size() - 1);
}

void Tape::backward(Var loss) {
  if (!recording_) throw std::logic_error("backward on a tape that does not record gradients");
  if (backward_done_) throw std::logic_error("backward called twice on the same tape");
  if (value(loss).size() != 1) {
    throw DimensionError("backward needs a scalar loss, got shape " +
                         shape_string(value(loss).shape()));
  }
  backward_done_ = true;
  grad_buffer(loss)[0] = 1.0;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.backward || !node.has_grad) continue;
    node.backward(*this, node.grad, node.value);
  }
  for (const ParamLeaf& leaf : param_leaves_) {
    const Node& node = nodes_[leaf.id];
    if (!node.has_grad) continue;
    Array& target = *leaf.target;
    if (target.shape() != node.value.shape()) target = Array(node.value.shape(), 0.0);
    for (std::size_t i = 0; i < target.size(); ++i) target[i] += node.grad[i];
  }
}

}  // namespace csp::nd
