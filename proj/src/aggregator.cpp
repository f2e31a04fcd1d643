// SPDX-License-Identifier: Apache-2.0
#include "hindsight/aggregator.hpp"

#include <algorithm>
#include <cmath>

namespace hindsight {

template <typename T>
FeatureAggregator<T>::FeatureAggregator(std::size_t k, std::size_t d_model, ParameterStore<T>& store,
                                        const std::string& prefix)
    : k_(k), d_model_(d_model) {
  if (k < 1) throw ConfigError("aggregator: k must be >= 1");
  const std::size_t d = d_model, dh = d_model;
  w_.w1 = &store.add(prefix + ".w1", Shape{d, d});
  w_.b1 = &store.add(prefix + ".b1", Shape{d});
  w_.w2_fv = &store.add(prefix + ".w2_fv", Shape{dh, d});
  w_.w2_gq = &store.add(prefix + ".w2_gq", Shape{dh, d});
  w_.b2 = &store.add(prefix + ".b2", Shape{dh});
  w_.w3 = &store.add(prefix + ".w3", Shape{1, dh});
}

template <typename T>
void FeatureAggregator<T>::init(Rng& rng) {
  init_uniform_fan_in(w_.w1->value, d_model_, rng);
  init_uniform_fan_in(w_.w2_fv->value, d_model_, rng);
  init_uniform_fan_in(w_.w2_gq->value, d_model_, rng);
  init_uniform_fan_in(w_.w3->value, d_model_, rng);
  w_.b1->value.fill(T(0));
  w_.b2->value.fill(T(0));
}

template <typename T>
ad::Var<T> FeatureAggregator<T>::gate_logits(ad::Var<T> mfv, std::optional<ad::Var<T>> gq) const {
  ad::Tape<T>& tape = *mfv.tape;
  if (mfv.value().rank() != 2 || mfv.shape()[1] != d_model_ || mfv.shape()[0] % k_ != 0) {
    throw DimensionError("aggregate: MFV " + shape_str(mfv.shape()) + " is not [P*" + std::to_string(k_) + " x " +
                         std::to_string(d_model_) + "]");
  }
  const std::size_t P = mfv.shape()[0] / k_;
  ad::Var<T> query = gq ? *gq : tape.constant(Tensor<T>(Shape{P, d_model_}), "zero_query");
  if (query.shape() != Shape{P, d_model_}) {
    throw DimensionError("aggregate: graph query " + shape_str(query.shape()) + " does not match [" +
                         std::to_string(P) + "x" + std::to_string(d_model_) + "]");
  }
  auto param = [&tape](Parameter<T>* p) { return tape.parameter(*p); };
  ad::Var<T> eta_gq = ad::relu(ad::linear(query, param(w_.w1), param(w_.b1)));
  ad::Var<T> query_term = ad::repeat_rows(ad::linear(eta_gq, param(w_.w2_gq), std::nullopt), k_);
  ad::Var<T> eta1 = ad::relu(ad::add(ad::linear(mfv, param(w_.w2_fv), param(w_.b2)), query_term));
  ad::Var<T> eta2 = ad::linear(eta1, param(w_.w3), std::nullopt);
  return ad::reshape(eta2, Shape{P, k_});
}

template <typename T>
AggregateResult<T> FeatureAggregator<T>::aggregate(ad::Var<T> mfv, std::optional<ad::Var<T>> gq) const {
  ad::Var<T> gate = ad::softmax_rows(gate_logits(mfv, gq));
  AggregateResult<T> r{ad::gate_combine(gate, mfv), gate, std::nullopt};
  if (!gq) r.divergence = ad::divergence_loss(gate);
  return r;
}

double divergence_loss(const std::vector<double>& gate) {
  const double k = static_cast<double>(gate.size());
  double kl = 0.0;
  for (double c : gate) kl += c * std::log(std::max(c, ad::kGateClamp) * k);
  return -kl;
}

template class FeatureAggregator<float>;
template class FeatureAggregator<double>;

}  // namespace hindsight
