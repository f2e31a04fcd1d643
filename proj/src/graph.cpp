// SPDX-License-Identifier: Apache-2.0
#include "hindsight/graph.hpp"

#include <cmath>

namespace hindsight {

void GraphConfig::validate() const {
  if (d_model == 0) throw ConfigError("graph: d_model must be > 0");
  if (N < 1) throw ConfigError("graph: N must be >= 1");
  if (heads < 1 || d_model % heads != 0) throw ConfigError("graph: d_model must be divisible by heads");
  if (agg_period < 1) throw ConfigError("graph: agg_period must be >= 1");
}

template <typename T>
AttentionWeights<T> AttentionWeights<T>::create(ParameterStore<T>& store, const std::string& prefix,
                                                std::size_t d_model, std::size_t heads) {
  if (heads < 1 || d_model % heads != 0) throw ConfigError("attention: d_model must be divisible by heads");
  AttentionWeights w;
  const Shape m{d_model, d_model}, v{d_model};
  w.wq = &store.add(prefix + ".query.weight", m);
  w.bq = &store.add(prefix + ".query.bias", v);
  w.wk = &store.add(prefix + ".key.weight", m);
  w.wv = &store.add(prefix + ".value.weight", m);
  w.bv = &store.add(prefix + ".value.bias", v);
  w.wo = &store.add(prefix + ".output.weight", m);
  w.bo = &store.add(prefix + ".output.bias", v);
  w.heads = heads;
  return w;
}

template <typename T>
void AttentionWeights<T>::init(Rng& rng) {
  for (Parameter<T>* p : {wq, wk, wv, wo}) init_uniform_fan_in(p->value, p->value.dim(1), rng);
  for (Parameter<T>* p : {bq, bv, bo}) p->value.fill(T(0));
}

template <typename T>
LayerNormWeights<T> LayerNormWeights<T>::create(ParameterStore<T>& store, const std::string& prefix,
                                                std::size_t d_model) {
  LayerNormWeights w;
  w.gain = &store.add(prefix + ".gain", Shape{d_model});
  w.shift = &store.add(prefix + ".shift", Shape{d_model});
  return w;
}

template <typename T>
void LayerNormWeights<T>::init() {
  gain->value.fill(T(1));
  shift->value.fill(T(0));
}

template <typename T>
ad::Var<T> LayerNormWeights<T>::apply(ad::Var<T> x) const {
  ad::Tape<T>& tape = *x.tape;
  return ad::layer_norm_rows(x, tape.parameter(*gain), tape.parameter(*shift));
}

template <typename T>
FeedForwardWeights<T> FeedForwardWeights<T>::create(ParameterStore<T>& store, const std::string& prefix,
                                                    std::size_t in, std::size_t hidden, std::size_t out) {
  FeedForwardWeights w;
  w.w1 = &store.add(prefix + ".0.weight", Shape{hidden, in});
  w.b1 = &store.add(prefix + ".0.bias", Shape{hidden});
  w.w2 = &store.add(prefix + ".1.weight", Shape{out, hidden});
  w.b2 = &store.add(prefix + ".1.bias", Shape{out});
  return w;
}

template <typename T>
void FeedForwardWeights<T>::init(Rng& rng) {
  init_uniform_fan_in(w1->value, w1->value.dim(1), rng);
  init_uniform_fan_in(w2->value, w2->value.dim(1), rng);
  b1->value.fill(T(0));
  b2->value.fill(T(0));
}

template <typename T>
ad::Var<T> FeedForwardWeights<T>::apply(ad::Var<T> x) const {
  ad::Tape<T>& tape = *x.tape;
  ad::Var<T> h = ad::relu(ad::linear(x, tape.parameter(*w1), tape.parameter(*b1)));
  return ad::linear(h, tape.parameter(*w2), tape.parameter(*b2));
}

template <typename T>
ad::Var<T> attention(ad::Var<T> queries, ad::Var<T> memory, const AttentionWeights<T>& w,
                     std::vector<ad::Var<T>>* attention) {
  ad::Tape<T>& tape = *queries.tape;
  const std::size_t d = w.wq->value.dim(0);
  if (queries.value().rank() != 2 || queries.shape()[1] != d || memory.value().rank() != 2 ||
      memory.shape()[1] != d) {
    throw DimensionError("attention: inputs " + shape_str(queries.shape()) + ", " + shape_str(memory.shape()) +
                         " do not have width " + std::to_string(d));
  }
  if (queries.shape()[0] == 0 || memory.shape()[0] == 0) throw DimensionError("attention: empty node set");
  auto param = [&tape](Parameter<T>* p) { return tape.parameter(*p); };
  ad::Var<T> q = ad::linear(queries, param(w.wq), param(w.bq));
  ad::Var<T> k = ad::linear(memory, param(w.wk), std::nullopt);
  ad::Var<T> v = ad::linear(memory, param(w.wv), param(w.bv));
  const std::size_t dh = d / w.heads;
  const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  std::vector<ad::Var<T>> heads;
  heads.reserve(w.heads);
  for (std::size_t h = 0; h < w.heads; ++h) {
    const std::size_t b = h * dh, e = b + dh;
    ad::Var<T> scores = ad::scale(ad::matmul_nt(ad::slice_cols(q, b, e), ad::slice_cols(k, b, e)), inv_sqrt);
    ad::Var<T> weights = ad::softmax_rows(scores);
    if (attention) attention->push_back(weights);
    heads.push_back(ad::matmul(weights, ad::slice_cols(v, b, e)));
  }
  ad::Var<T> joined = w.heads == 1 ? heads[0] : ad::concat_cols(heads);
  return ad::linear(joined, param(w.wo), param(w.bo));
}

template <typename T>
ad::Var<T> graph_layer(ad::Var<T> nodes, ad::Var<T> mfv, const GraphLayerWeights<T>& w,
                       const FeatureAggregator<T>* aggregator, std::vector<ad::Var<T>>* attention) {
  ad::Var<T> u = w.norm1.apply(ad::add(nodes, mha(nodes, w.attn, attention)));
  ad::Var<T> f;
  if (w.use_aggregator) {
    if (!aggregator) throw ConfigError("graph_layer: aggregator layer needs a feature aggregator");
    ad::Var<T> afv = aggregator->aggregate(mfv, u).afv;
    f = w.ffn.apply(ad::concat_cols(std::vector<ad::Var<T>>{u, afv}));
  } else {
    f = w.ffn.apply(u);
  }
  return w.norm2.apply(ad::add(u, f));
}

template <typename T>
AttentionGraph<T>::AttentionGraph(const GraphConfig& config, ParameterStore<T>& store, const std::string& prefix)
    : config_(config) {
  config_.validate();
  const std::size_t d = config_.d_model, ff = config_.ff_width();
  for (std::size_t i = 0; i < config_.N; ++i) {
    const std::string p = prefix + "." + std::to_string(i);
    GraphLayerWeights<T> lw;
    lw.use_aggregator = config_.uses_aggregator(i);
    lw.attn = AttentionWeights<T>::create(store, p + ".mha", d, config_.heads);
    lw.norm1 = LayerNormWeights<T>::create(store, p + ".norm1", d);
    lw.ffn = FeedForwardWeights<T>::create(store, p + ".ffn", lw.use_aggregator ? 2 * d : d, ff, d);
    lw.norm2 = LayerNormWeights<T>::create(store, p + ".norm2", d);
    layers_.push_back(lw);
  }
}

template <typename T>
void AttentionGraph<T>::init(Rng& rng) {
  for (GraphLayerWeights<T>& lw : layers_) {
    lw.attn.init(rng);
    lw.norm1.init();
    lw.ffn.init(rng);
    lw.norm2.init();
  }
}

template <typename T>
ad::Var<T> AttentionGraph<T>::forward(ad::Var<T> ffv, ad::Var<T> mfv, const FeatureAggregator<T>& aggregator) const {
  ad::Var<T> nodes = ffv;
  for (const GraphLayerWeights<T>& lw : layers_) nodes = graph_layer(nodes, mfv, lw, &aggregator);
  return nodes;
}

#define HINDSIGHT_INSTANTIATE(T)                                                                                \
  template struct AttentionWeights<T>;                                                                         \
  template struct LayerNormWeights<T>;                                                                         \
  template struct FeedForwardWeights<T>;                                                                       \
  template ad::Var<T> attention(ad::Var<T>, ad::Var<T>, const AttentionWeights<T>&, std::vector<ad::Var<T>>*); \
  template ad::Var<T> graph_layer(ad::Var<T>, ad::Var<T>, const GraphLayerWeights<T>&,                         \
                                  const FeatureAggregator<T>*, std::vector<ad::Var<T>>*);                      \
  template class AttentionGraph<T>;

HINDSIGHT_INSTANTIATE(float)
HINDSIGHT_INSTANTIATE(double)

}  // namespace hindsight
