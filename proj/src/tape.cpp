// SPDX-License-Identifier: Apache-2.0
#include "hindsight/tape.hpp"

namespace hindsight::ad {

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value, const char* label) {
  Node n;
  n.value = std::move(value);
  n.label = label;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::parameter(Parameter<T>& p) {
  if (auto it = param_ids_.find(&p); it != param_ids_.end()) return {this, it->second};
  Node n;
  n.external = &p.value;
  n.param = &p;
  n.requires_grad = grad_enabled_;
  n.label = "parameter";
  nodes_.push_back(std::move(n));
  param_ids_.emplace(&p, nodes_.size() - 1);
  return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, const std::vector<Var<T>>& inputs, const char* label, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  n.label = label;
  if (grad_enabled_) {
    for (const auto& in : inputs) {
      if (nodes_[in.id].requires_grad) {
        n.requires_grad = true;
        break;
      }
    }
  }
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <typename T>
const Tensor<T>& Tape<T>::value(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.external ? *n.external : n.value;
}

template <typename T>
Tensor<T>& Tape<T>::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor<T>(value(id).shape());
  return n.grad;
}

template <typename T>
void Tape<T>::backward(Var<T> root, T seed) {
  if (value(root.id).size() != 1) {
    throw DimensionError("backward: root must hold a single element, got " + shape_str(value(root.id).shape()));
  }
  if (!nodes_[root.id].requires_grad) return;
  grad(root.id)[0] += seed;
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.empty() || !n.backward) continue;
    n.backward(*this, n.grad);
  }
  for (auto& n : nodes_) {
    if (n.param && !n.grad.empty()) n.param->grad.add_(n.grad);
  }
}

template <typename T>
std::optional<std::size_t> Tape<T>::first_non_finite() const {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!value(i).all_finite()) return i;
  }
  return std::nullopt;
}

template class Tape<float>;
template class Tape<double>;

}  // namespace hindsight::ad
