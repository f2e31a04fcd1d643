// SPDX-License-Identifier: Apache-2.0
#include "hindsight/parameter.hpp"

#include <cmath>

namespace hindsight {

template <typename T>
Parameter<T>& ParameterStore<T>::add(const std::string& name, Shape shape) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  index_.emplace(name, params_.size());
  params_.push_back(std::make_unique<Parameter<T>>(name, std::move(shape)));
  return *params_.back();
}

template <typename T>
Parameter<T>* ParameterStore<T>::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : params_[it->second].get();
}

template <typename T>
const Parameter<T>* ParameterStore<T>::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : params_[it->second].get();
}

template <typename T>
std::size_t ParameterStore<T>::element_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

template <typename T>
void ParameterStore<T>::zero_grad() {
  for (auto& p : params_) p->grad.fill(T(0));
}

template <typename T>
void init_uniform_fan_in(Tensor<T>& t, std::size_t fan_in, Rng& rng) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : t.vec()) v = static_cast<T>(rng.uniform(-scale, scale));
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template void init_uniform_fan_in(Tensor<float>&, std::size_t, Rng&);
template void init_uniform_fan_in(Tensor<double>&, std::size_t, Rng&);

}  // namespace hindsight
