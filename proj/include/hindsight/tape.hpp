// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode differentiation over a linear tape. Each recorded node owns
// its forward value; backward walks the nodes in reverse and pushes the
// upstream gradient into the inputs through the node's closure. Parameter
// leaves flush their gradient into Parameter::grad at the end of backward.
#pragma once

#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "hindsight/parameter.hpp"
#include "hindsight/tensor.hpp"

namespace hindsight::ad {

template <typename T>
class Tape;

/// Lightweight handle to a tape node.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(id); }
  const Shape& shape() const { return tape->value(id).shape(); }
};

template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& grad_out)>;

  /// With gradients disabled no closures are kept and parameters are
  /// recorded as plain constants.
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var<T> constant(Tensor<T> value, const char* label = "constant");
  /// Leaf bound to `p`; the same parameter always maps to the same node.
  Var<T> parameter(Parameter<T>& p);
  Var<T> record(Tensor<T> value, const std::vector<Var<T>>& inputs, const char* label, BackwardFn fn);

  const Tensor<T>& value(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool requires_grad(Var<T> v) const { return nodes_[v.id].requires_grad; }
  /// Gradient buffer of a node, zero-initialized on first access.
  Tensor<T>& grad(std::size_t id);
  Tensor<T>& grad(Var<T> v) { return grad(v.id); }

  /// Seeds d(root)/d(root) = seed for a single-element root and propagates.
  void backward(Var<T> root, T seed = T(1));

  std::size_t size() const { return nodes_.size(); }
  const char* label(std::size_t id) const { return nodes_[id].label; }
  /// First node (in recording order) whose value has a NaN or Inf.
  std::optional<std::size_t> first_non_finite() const;

 private:
  struct Node {
    Tensor<T> value;
    const Tensor<T>* external = nullptr;
    Parameter<T>* param = nullptr;
    Tensor<T> grad;
    bool requires_grad = false;
    const char* label = "";
    BackwardFn backward;
  };

  bool grad_enabled_;
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter<T>*, std::size_t> param_ids_;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace hindsight::ad
