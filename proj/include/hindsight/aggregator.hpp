// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>

#include "hindsight/ops.hpp"
#include "hindsight/parameter.hpp"

namespace hindsight {

/// Gate network weights, shared across the k feature vectors of a patch.
/// The query path (w1, b1) is shared across every graph depth. The logit
/// layer w3 has no bias: a constant added to every logit of a patch
/// cancels in the softmax.
template <typename T>
struct AggregatorWeights {
  Parameter<T>* w1 = nullptr;     // [d_model x d_model]
  Parameter<T>* b1 = nullptr;     // [d_model]
  Parameter<T>* w2_fv = nullptr;  // [d_h x d_model]
  Parameter<T>* w2_gq = nullptr;  // [d_h x d_model]
  Parameter<T>* b2 = nullptr;     // [d_h]
  Parameter<T>* w3 = nullptr;     // [1 x d_h]
};

template <typename T>
struct AggregateResult {
  ad::Var<T> afv;   // [P x d_model]
  ad::Var<T> gate;  // [P x k], rows sum to 1
  /// Mean divergence loss over patches; only produced when no graph query
  /// was supplied (the initial, pre-graph pass).
  std::optional<ad::Var<T>> divergence;
};

template <typename T>
class FeatureAggregator {
 public:
  /// Hidden width d_h equals d_model.
  FeatureAggregator(std::size_t k, std::size_t d_model, ParameterStore<T>& store,
                    const std::string& prefix = "aggregator");

  void init(Rng& rng);
  std::size_t k() const { return k_; }
  std::size_t d_model() const { return d_model_; }
  const AggregatorWeights<T>& weights() const { return w_; }

  /// mfv: [P*k x d_model] (row p*k + j is FV^(j) of patch p).
  /// gq:  [P x d_model] graph query, or nullopt for the zero query.
  AggregateResult<T> aggregate(ad::Var<T> mfv, std::optional<ad::Var<T>> gq) const;

  /// Pre-softmax gate logits [P x k]; exposed for invariance tests.
  ad::Var<T> gate_logits(ad::Var<T> mfv, std::optional<ad::Var<T>> gq) const;

 private:
  std::size_t k_, d_model_;
  AggregatorWeights<T> w_;
};

/// -KL(c || uniform(k)) for a single gate vector, natural log.
double divergence_loss(const std::vector<double>& gate);

extern template class FeatureAggregator<float>;
extern template class FeatureAggregator<double>;

}  // namespace hindsight
