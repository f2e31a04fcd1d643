// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "hindsight/aggregator.hpp"
#include "hindsight/ops.hpp"

namespace hindsight {

struct GraphConfig {
  std::size_t d_model = 64;
  std::size_t N = 4;
  std::size_t heads = 4;
  std::size_t d_ff = 0;        // 0 selects 2 * d_model
  std::size_t agg_period = 2;  // feedback on 1-based layers divisible by this

  void validate() const;
  std::size_t ff_width() const { return d_ff == 0 ? 2 * d_model : d_ff; }
  bool uses_aggregator(std::size_t layer) const { return (layer + 1) % agg_period == 0; }
};

/// Query/key/value/output projections, each [d_model x d_model]. The key
/// projection is unbiased since a key bias only shifts every score of a
/// query row by the same amount.
template <typename T>
struct AttentionWeights {
  Parameter<T>*wq = nullptr, *bq = nullptr;
  Parameter<T>* wk = nullptr;
  Parameter<T>*wv = nullptr, *bv = nullptr;
  Parameter<T>*wo = nullptr, *bo = nullptr;
  std::size_t heads = 1;

  static AttentionWeights create(ParameterStore<T>& store, const std::string& prefix, std::size_t d_model,
                                 std::size_t heads);
  void init(Rng& rng);
};

template <typename T>
struct LayerNormWeights {
  Parameter<T>*gain = nullptr, *shift = nullptr;

  static LayerNormWeights create(ParameterStore<T>& store, const std::string& prefix, std::size_t d_model);
  void init();
  ad::Var<T> apply(ad::Var<T> x) const;
};

/// Two dense layers with ReLU between: in -> hidden -> out.
template <typename T>
struct FeedForwardWeights {
  Parameter<T>*w1 = nullptr, *b1 = nullptr, *w2 = nullptr, *b2 = nullptr;

  static FeedForwardWeights create(ParameterStore<T>& store, const std::string& prefix, std::size_t in,
                                   std::size_t hidden, std::size_t out);
  void init(Rng& rng);
  ad::Var<T> apply(ad::Var<T> x) const;
};

/// Scaled dot-product attention of `queries` [Pq x d] over `memory` [Pm x d].
/// When `attention` is given, the per-head [Pq x Pm] weight matrices are
/// appended to it.
template <typename T>
ad::Var<T> attention(ad::Var<T> queries, ad::Var<T> memory, const AttentionWeights<T>& w,
                     std::vector<ad::Var<T>>* attention = nullptr);

/// Self-attention over a fully connected node set.
template <typename T>
ad::Var<T> mha(ad::Var<T> nodes, const AttentionWeights<T>& w, std::vector<ad::Var<T>>* attention = nullptr) {
  return hindsight::attention(nodes, nodes, w, attention);
}

template <typename T>
struct GraphLayerWeights {
  AttentionWeights<T> attn;
  LayerNormWeights<T> norm1, norm2;
  FeedForwardWeights<T> ffn;  // first layer input is 2*d_model on aggregator layers
  bool use_aggregator = false;
};

/// u = LN(x + mha(x)); f = FFN(concat(u, AFV(mfv, gq = u))) on aggregator
/// layers and FFN(u) otherwise; returns LN(u + f).
template <typename T>
ad::Var<T> graph_layer(ad::Var<T> nodes, ad::Var<T> mfv, const GraphLayerWeights<T>& w,
                       const FeatureAggregator<T>* aggregator, std::vector<ad::Var<T>>* attention = nullptr);

template <typename T>
class AttentionGraph {
 public:
  AttentionGraph(const GraphConfig& config, ParameterStore<T>& store, const std::string& prefix = "graph");

  void init(Rng& rng);
  const GraphConfig& config() const { return config_; }
  const GraphLayerWeights<T>& layer(std::size_t i) const { return layers_[i]; }

  /// Runs all N layers. `aggregator` supplies the feedback path.
  ad::Var<T> forward(ad::Var<T> ffv, ad::Var<T> mfv, const FeatureAggregator<T>& aggregator) const;

 private:
  GraphConfig config_;
  std::vector<GraphLayerWeights<T>> layers_;
};

extern template class AttentionGraph<float>;
extern template class AttentionGraph<double>;

}  // namespace hindsight
