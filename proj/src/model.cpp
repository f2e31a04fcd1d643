// SPDX-License-Identifier: Apache-2.0
#include "hindsight/model.hpp"

namespace hindsight {

void ModelConfig::validate() const {
  grid().validate();
  extractor().validate();
  pos_encoder().validate();
  graph().validate();
  if (decoder_layers < 1) throw ConfigError("decoder_layers must be >= 1");
}

template <typename T>
Decoder<T>::Decoder(std::size_t layers, std::size_t d_model, std::size_t heads, std::size_t d_ff, std::size_t H,
                    ParameterStore<T>& store, const std::string& prefix) {
  const std::size_t ff = d_ff == 0 ? 2 * d_model : d_ff;
  for (std::size_t i = 0; i < layers; ++i) {
    const std::string p = prefix + "." + std::to_string(i);
    Layer l;
    l.self_attn = AttentionWeights<T>::create(store, p + ".self_attn", d_model, heads);
    l.norm1 = LayerNormWeights<T>::create(store, p + ".norm1", d_model);
    l.cross_attn = AttentionWeights<T>::create(store, p + ".cross_attn", d_model, heads);
    l.norm2 = LayerNormWeights<T>::create(store, p + ".norm2", d_model);
    l.ffn = FeedForwardWeights<T>::create(store, p + ".ffn", d_model, ff, d_model);
    l.norm3 = LayerNormWeights<T>::create(store, p + ".norm3", d_model);
    layers_.push_back(l);
  }
  head_w = &store.add(prefix + ".head.weight", Shape{3 * H * H, d_model});
  head_b = &store.add(prefix + ".head.bias", Shape{3 * H * H});
}

template <typename T>
void Decoder<T>::init(Rng& rng) {
  for (Layer& l : layers_) {
    l.self_attn.init(rng);
    l.norm1.init();
    l.cross_attn.init(rng);
    l.norm2.init();
    l.ffn.init(rng);
    l.norm3.init();
  }
  init_uniform_fan_in(head_w->value, head_w->value.dim(1), rng);
  head_b->value.fill(T(0));
}

template <typename T>
ad::Var<T> Decoder<T>::forward(ad::Var<T> queries, ad::Var<T> memory) const {
  ad::Var<T> x = queries;
  for (const Layer& l : layers_) {
    x = l.norm1.apply(ad::add(x, mha(x, l.self_attn)));
    x = l.norm2.apply(ad::add(x, attention(x, memory, l.cross_attn)));
    x = l.norm3.apply(ad::add(x, l.ffn.apply(x)));
  }
  ad::Tape<T>& tape = *x.tape;
  return ad::linear(x, tape.parameter(*head_w), tape.parameter(*head_b));
}

template <typename T>
HindSight<T>::HindSight(const ModelConfig& config) : config_(config) {
  config_.validate();
  extractor_ = std::make_unique<FeatureExtractor<T>>(config_.extractor(), store_);
  aggregator_ = std::make_unique<FeatureAggregator<T>>(static_cast<std::size_t>(config_.k), config_.d_model, store_);
  pos_encoder_ = std::make_unique<PosScaleEncoder<T>>(config_.pos_encoder(), store_);
  graph_ = std::make_unique<AttentionGraph<T>>(config_.graph(), store_);
  decoder_ = std::make_unique<Decoder<T>>(config_.decoder_layers, config_.d_model, config_.heads, config_.d_ff,
                                          config_.H, store_);
}

template <typename T>
void HindSight<T>::init(std::uint64_t seed) {
  const Rng root(seed);
  Rng r0 = root.fork(0), r1 = root.fork(1), r2 = root.fork(2), r3 = root.fork(3), r4 = root.fork(4);
  extractor_->init(r0);
  aggregator_->init(r1);
  pos_encoder_->init(r2);
  graph_->init(r3);
  decoder_->init(r4);
}

template <typename T>
EncodeResult<T> HindSight<T>::encode(ad::Tape<T>& tape, const PatchSet& patches) const {
  if (patches.size() == 0) throw DimensionError("encode: empty patch set");
  if (patches.rescale_dim != config_.H) {
    throw DimensionError("encode: patches rescaled to " + std::to_string(patches.rescale_dim) + ", model expects H=" +
                         std::to_string(config_.H));
  }
  ad::Var<T> mfv;
  if constexpr (std::is_same_v<T, float>) {
    mfv = extractor_->extract_mfv(tape, patches.patches);
  } else {
    std::vector<Tensor<T>> converted;
    converted.reserve(patches.size());
    for (const auto& p : patches.patches) converted.push_back(p.template cast<T>());
    mfv = extractor_->extract_mfv(tape, converted);
  }
  AggregateResult<T> initial = aggregator_->aggregate(mfv, std::nullopt);
  ad::Var<T> ffv = form_ffv(initial.afv, pos_encoder_->encode(tape, patches.meta));
  ad::Var<T> nodes = graph_->forward(ffv, mfv, *aggregator_);
  return {nodes, initial.gate, *initial.divergence, mfv};
}

template <typename T>
ad::Var<T> HindSight<T>::decode(ad::Tape<T>& tape, const std::vector<PatchMeta>& masked_meta, ad::Var<T> nodes,
                                const std::vector<std::size_t>& memory_rows) const {
  if (masked_meta.empty()) throw DimensionError("decode: no masked patches");
  if (memory_rows.empty()) throw DimensionError("decode: empty decoder memory");
  ad::Var<T> queries = pos_encoder_->encode(tape, masked_meta);
  return decoder_->forward(queries, ad::gather_rows(nodes, memory_rows));
}

template class Decoder<float>;
template class Decoder<double>;
template class HindSight<float>;
template class HindSight<double>;

}  // namespace hindsight
