#pragma once

#include <deque>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "csp/nd/array.hpp"

namespace csp::nd {

class ParamStore;
class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape
/// lives.
class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Array& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode recording of a forward computation.
///
/// Nodes are appended in evaluation order, so reverse insertion order is a
/// reverse topological order. A tape built with `record_gradients = false`
/// keeps forward values only and refuses backward().
class Tape {
 public:
  /// Receives the gradient and value of the node's output; accumulates into
  /// the parents' gradient buffers.
  using BackwardFn =
      std::function<void(Tape&, const Array& out_grad, const Array& out_value)>;

  explicit Tape(bool record_gradients = true) : recording_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Array value);
  /// Leaf that receives a gradient (used by tests and finite-difference checks).
  Var variable(Array value);
  /// Leaf bound to a stored parameter; repeated requests return the same node.
  /// backward() adds the leaf gradient into the store's gradient buffer.
  Var param(ParamStore& store, const std::string& name);

  const Array& value(Var v) const { return nodes_[v.id()].value; }
  /// Gradient after backward(); an all-zero array if the node was not reached.
  Array grad(Var v) const;

  /// Runs reverse accumulation from a scalar (size-1) loss.
  void backward(Var loss);

  // Interface used by operation implementations.
  Var push(Array value, const std::vector<Var>& parents, BackwardFn backward);
  bool needs_grad(Var v) const { return nodes_[v.id()].requires_grad; }
  /// Gradient buffer of `v`, zero-initialised on first use.
  Array& grad_buffer(Var v);

 private:
  struct Node {
    Array value;
    Array grad;
    BackwardFn backward;
    bool requires_grad = false;
    bool has_grad = false;
  };
  struct ParamLeaf {
    std::size_t id;
    Array* target;
  };

  bool recording_;
  bool backward_done_ = false;
  std::deque<Node> nodes_;
  std::map<std::pair<const ParamStore*, std::string>, std::size_t> param_ids_;
  std::vector<ParamLeaf> param_leaves_;
};

inline const Array& Var::value() const { return tape_->value(*this); }

}  // namespace csp::nd
