// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "hindsight/aggregator.hpp"
#include "hindsight/extractor.hpp"
#include "hindsight/graph.hpp"
#include "hindsight/patches.hpp"
#include "hindsight/pos_encoder.hpp"

namespace hindsight {

/// Every architectural hyper-parameter. `k` is both the number of patch
/// levels and the number of extractor sub-modules.
struct ModelConfig {
  GridMode mode = GridMode::Static;
  int k = 3;
  int D = 0;
  std::size_t H = 16;
  std::size_t d_model = 32;
  std::size_t channels = 8;
  std::size_t N = 4;
  std::size_t heads = 4;
  std::size_t d_ff = 0;
  std::size_t agg_period = 2;
  EncodingVariant encoder = EncodingVariant::TrainablePeriodic;
  double lambda = 10.0;
  std::size_t decoder_layers = 2;

  void validate() const;
  GridConfig grid() const { return {mode, k, D, H}; }
  ExtractorConfig extractor() const { return {static_cast<std::size_t>(k), H, d_model, channels}; }
  EncoderConfig pos_encoder() const { return {encoder, d_model, lambda}; }
  GraphConfig graph() const { return {d_model, N, heads, d_ff, agg_period}; }
};

/// Transformer decoder: per layer self-attention over the queries,
/// cross-attention over the memory, FFN, each followed by a residual add
/// and layer norm. A final dense layer maps d_model to 3*H*H pixels.
template <typename T>
class Decoder {
 public:
  Decoder(std::size_t layers, std::size_t d_model, std::size_t heads, std::size_t d_ff, std::size_t H,
          ParameterStore<T>& store, const std::string& prefix = "decoder");

  void init(Rng& rng);
  std::size_t layers() const { return layers_.size(); }

  /// queries [M x d_model], memory [R x d_model] -> [M x 3*H*H].
  ad::Var<T> forward(ad::Var<T> queries, ad::Var<T> memory) const;

 private:
  struct Layer {
    AttentionWeights<T> self_attn, cross_attn;
    LayerNormWeights<T> norm1, norm2, norm3;
    FeedForwardWeights<T> ffn;
  };
  std::vector<Layer> layers_;
  Parameter<T>*head_w = nullptr, *head_b = nullptr;
};

template <typename T>
struct EncodeResult {
  ad::Var<T> nodes;  // final graph state [P x d_model]
  ad::Var<T> gate;   // initial gate vectors [P x k]
  ad::Var<T> divergence;
  ad::Var<T> mfv;    // [P*k x d_model]
};

template <typename T>
class HindSight {
 public:
  explicit HindSight(const ModelConfig& config);
  HindSight(HindSight&&) = delete;

  /// Seeds every parameter from `seed` (independent stream per component).
  void init(std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParameterStore<T>& parameters() { return store_; }
  const ParameterStore<T>& parameters() const { return store_; }
  const FeatureExtractor<T>& extractor() const { return *extractor_; }
  const FeatureAggregator<T>& aggregator() const { return *aggregator_; }
  const PosScaleEncoder<T>& pos_encoder() const { return *pos_encoder_; }
  const AttentionGraph<T>& graph() const { return *graph_; }
  const Decoder<T>& decoder() const { return *decoder_; }

  /// Extractor -> initial aggregation (no query) -> FFV -> attention graph.
  EncodeResult<T> encode(ad::Tape<T>& tape, const PatchSet& patches) const;

  /// Reconstructs the patches described by `masked_meta` from the graph rows
  /// listed in `memory_rows` -> [M x 3*H*H].
  ad::Var<T> decode(ad::Tape<T>& tape, const std::vector<PatchMeta>& masked_meta, ad::Var<T> nodes,
                    const std::vector<std::size_t>& memory_rows) const;

 private:
  ModelConfig config_;
  ParameterStore<T> store_;
  std::unique_ptr<FeatureExtractor<T>> extractor_;
  std::unique_ptr<FeatureAggregator<T>> aggregator_;
  std::unique_ptr<PosScaleEncoder<T>> pos_encoder_;
  std::unique_ptr<AttentionGraph<T>> graph_;
  std::unique_ptr<Decoder<T>> decoder_;
};

/// Copies every parameter of `from` into the same-named parameter of `to`.
/// Throws ConfigError naming the first missing or mismatched parameter.
template <typename From, typename To>
void copy_parameters(const ParameterStore<From>& from, ParameterStore<To>& to) {
  for (const auto& dst : to) {
    const Parameter<From>* src = from.find(dst->name);
    if (!src) throw ConfigError("parameter '" + dst->name + "' missing from source");
    if (src->value.shape() != dst->value.shape()) {
      throw ConfigError("parameter '" + dst->name + "' has shape " + shape_str(src->value.shape()) + ", expected " +
                        shape_str(dst->value.shape()));
    }
    dst->value = src->value.template cast<To>();
  }
}

extern template class Decoder<float>;
extern template class Decoder<double>;
extern template class HindSight<float>;
extern template class HindSight<double>;

}  // namespace hindsight
