// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "hindsight/rng.hpp"
#include "hindsight/tensor.hpp"

namespace hindsight {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;  // same shape as value

  Parameter(std::string n, Shape shape) : name(std::move(n)), value(shape), grad(std::move(shape)) {}
};

/// Owns every trainable tensor of a model. Parameters have stable addresses
/// and unique names; insertion order is the canonical iteration order.
template <typename T>
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) noexcept = default;
  ParameterStore& operator=(ParameterStore&&) noexcept = default;

  /// Throws ConfigError on a duplicate name.
  Parameter<T>& add(const std::string& name, Shape shape);
  Parameter<T>* find(const std::string& name);
  const Parameter<T>* find(const std::string& name) const;

  std::size_t size() const { return params_.size(); }
  std::size_t element_count() const;
  Parameter<T>& operator[](std::size_t i) { return *params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return *params_[i]; }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad();

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::map<std::string, std::size_t> index_;
};

/// Centered uniform initialization in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
template <typename T>
void init_uniform_fan_in(Tensor<T>& t, std::size_t fan_in, Rng& rng);

extern template class ParameterStore<float>;
extern template class ParameterStore<double>;

}  // namespace hindsight
