#include "dfinger/nn/tape.hpp"

#include "dfinger/error.hpp"

namespace dfinger::nn {

Var Tape::Constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, false});
  return Var{nodes_.size() - 1};
}

Var Tape::Leaf(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, true});
  return Var{nodes_.size() - 1};
}

Var Tape::Param(const ParamStore& store, const std::string& name) {
  auto it = param_ids_.find(name);
  if (it != param_ids_.end()) return Var{it->second};
  Var v = Leaf(store.at(name));
  param_ids_.emplace(name, v.id);
  return v;
}

Var Tape::Record(const std::string& op, Tensor value, std::vector<Var> inputs,
                 BackwardFn backward) {
  value.CheckFinite(op);
  bool needs = false;
  for (Var in : inputs) needs = needs || nodes_[in.id].requires_grad;
  nodes_.push_back(Node{std::move(value), {}, std::move(inputs),
                        needs ? std::move(backward) : BackwardFn{}, needs});
  return Var{nodes_.size() - 1};
}

Tensor& Tape::grad(Var v) {
  Node& n = nodes_[v.id];
  if (n.grad.shape() != n.value.shape()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

void Tape::Backward(Var loss) {
  if (value(loss).size() != 1) {
    Fail(ErrorKind::kInvalidShape, "Backward needs a single-element loss, got " +
                                       ShapeString(value(loss).shape()));
  }
  grad(loss)[0] = 1.0;
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
    n.backward(*this, id);
  }
}

GradMap Tape::ParamGrads() const {
  GradMap out;
  for (const auto& [name, id] : param_ids_) {
    const Node& n = nodes_[id];
    out.emplace(name, n.grad.empty() ? Tensor(n.value.shape()) : n.grad);
  }
  return out;
}

}  // namespace dfinger::nn
