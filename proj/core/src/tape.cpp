#include "devae/tape.hpp"

#include <algorithm>

#include "devae/errors.hpp"

namespace devae::nn {

Var Tape::constant(Tensor value) {
  Node node;
  node.op = "constant";
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

Var Tape::parameter(Parameter& p) {
  Node node;
  node.op = "parameter";
  node.value = p.value;
  node.param = &p;
  node.requires_grad = true;
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

Var Tape::record(std::string_view op, std::vector<Var> inputs, ForwardFn forward, BackwardFn backward) {
  Node node;
  node.op = std::string(op);
  node.inputs.reserve(inputs.size());
  std::vector<const Tensor*> in;
  in.reserve(inputs.size());
  for (Var v : inputs) {
    if (v.id >= nodes_.size()) throw UsageError("tape input refers to an unknown node");
    node.inputs.push_back(v.id);
    node.requires_grad = node.requires_grad || nodes_[v.id].requires_grad;
    in.push_back(&nodes_[v.id].value);
  }
  forward(in, node.value);
  node.forward = std::move(forward);
  node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

void Tape::backward(Var loss) {
  if (loss.id >= nodes_.size()) throw UsageError("backward target is not on this tape");
  if (nodes_[loss.id].value.size() != 1) {
    throw UsageError("backward requires a scalar loss, got shape " + shape_to_string(nodes_[loss.id].value.shape()));
  }
  for (auto& node : nodes_) node.grad = Tensor();
  visit_order_.clear();

  nodes_[loss.id].grad = Tensor(nodes_[loss.id].value.shape(), 1.0);

  std::vector<const Tensor*> in;
  std::vector<Tensor*> gin;
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (node.grad.empty() || !node.requires_grad) continue;
    visit_order_.push_back(id);
    if (node.param != nullptr) {
      auto& acc = node.param->grad;
      if (acc.shape() != node.value.shape()) acc = Tensor(node.value.shape());
      for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += node.grad[k];
      continue;
    }
    if (!node.backward) continue;
    in.clear();
    gin.clear();
    for (std::size_t input : node.inputs) {
      Node& src = nodes_[input];
      in.push_back(&src.value);
      if (src.requires_grad) {
        if (src.grad.empty()) src.grad = Tensor(src.value.shape());
        gin.push_back(&src.grad);
      } else {
        gin.push_back(nullptr);
      }
    }
    node.backward(in, node.value, node.grad, gin);
  }
}

void Tape::replay() {
  std::vector<const Tensor*> in;
  for (auto& node : nodes_) {
    if (node.param != nullptr) {
      node.value = node.param->value;
      continue;
    }
    if (!node.forward) continue;
    in.clear();
    for (std::size_t input : node.inputs) in.push_back(&nodes_[input].value);
    node.forward(in, node.value);
  }
}

}  // namespace devae::nn
