#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dfinger/nn/param_store.hpp"
#include "dfinger/nn/tensor.hpp"

namespace dfinger::nn {

// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
  bool valid() const { return id != static_cast<std::size_t>(-1); }
};

// Reverse-mode tape. Ops append nodes in execution order; Backward walks them
// in exact reverse order and accumulates gradients additively.
class Tape {
 public:
  // Called during Backward with the tape and the node's own id; reads
  // grad(self) and the saved inputs, accumulates into inputs' grads.
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Var Constant(Tensor value);
  // A leaf bound to a stored parameter; repeated calls with the same name
  // return the same leaf, so shared weights collect one summed gradient.
  Var Param(const ParamStore& store, const std::string& name);
  Var Leaf(Tensor value);  // differentiable leaf not tied to a ParamStore

  // Appends an op node. `op` names the op in numeric errors. The node
  // requires grad iff any input does; `backward` is dropped otherwise.
  Var Record(const std::string& op, Tensor value, std::vector<Var> inputs,
             BackwardFn backward);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  const std::vector<Var>& inputs(std::size_t id) const { return nodes_[id].inputs; }
  const Tensor& value_of(std::size_t id) const { return nodes_[id].value; }

  // Gradient buffer of a node, zero-allocated on first access.
  Tensor& grad(Var v);
  Tensor& grad_of(std::size_t id) { return grad(Var{id}); }
  bool has_grad(Var v) const { return !nodes_[v.id].grad.empty() || nodes_[v.id].value.empty(); }

  // Seeds d(loss)/d(loss) = 1 for a single-element loss and runs the tape.
  void Backward(Var loss);

  // Gradients of every parameter leaf reached during Backward.
  GradMap ParamGrads() const;
  const std::map<std::string, std::size_t>& param_leaves() const { return param_ids_; }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<Var> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
  std::map<std::string, std::size_t> param_ids_;
};

}  // namespace dfinger::nn
