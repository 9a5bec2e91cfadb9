#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "devae/tensor.hpp"

namespace devae::nn {

/// A trainable tensor together with its accumulated gradient.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad = Tensor(value.shape()); }
};

/// Handle to a node on a Tape.
struct Var {
  static constexpr std::size_t kInvalid = std::numeric_limits<std::size_t>::max();
  std::size_t id = kInvalid;
  bool valid() const noexcept { return id != kInvalid; }
};

/// Records primitive applications in execution order. Because nodes are appended
/// as they are computed the record is already topologically sorted, and the
/// backward pass walks it from the back.
class Tape {
 public:
  using Inputs = std::span<const Tensor* const>;
  using GradInputs = std::span<Tensor* const>;
  using ForwardFn = std::function<void(Inputs inputs, Tensor& out)>;
  /// grad_inputs[k] is null when input k does not need a gradient.
  using BackwardFn =
      std::function<void(Inputs inputs, const Tensor& out, const Tensor& grad_out, GradInputs grad_inputs)>;

  Var constant(Tensor value);
  /// Leaf bound to `p`; backward() adds into p.grad, replay() re-reads p.value.
  Var parameter(Parameter& p);
  /// Runs `forward` immediately and records it together with its adjoint.
  Var record(std::string_view op, std::vector<Var> inputs, ForwardFn forward, BackwardFn backward);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  /// Gradient of the last backward() target with respect to `v` (empty if not reached).
  const Tensor& grad(Var v) const { return nodes_.at(v.id).grad; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::string_view op_name(Var v) const { return nodes_.at(v.id).op; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Reverse-mode sweep from a scalar node. Throws UsageError for non-scalar targets.
  void backward(Var loss);
  /// Recomputes every node's value in recorded order from the current leaf values.
  void replay();
  /// Node ids in the order the last backward() visited them.
  const std::vector<std::size_t>& backward_order() const noexcept { return visit_order_; }

 private:
  struct Node {
    std::string op;
    std::vector<std::size_t> inputs;
    Tensor value;
    Tensor grad;
    ForwardFn forward;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  std::vector<std::size_t> visit_order_;
};

}  // namespace devae::nn
