// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "hindsight/parameter.hpp"
#include "hindsight/tape.hpp"

namespace hindsight {

struct ExtractorConfig {
  std::size_t k = 3;         // number of sub-modules
  std::size_t H = 64;        // input patch side
  std::size_t d_model = 64;  // output width
  std::size_t channels = 32; // first-stage conv width; doubles per stage, capped at 8x

  void validate() const;
};

struct ConvLayerSpec {
  enum class Kind { Conv, Pool };
  Kind kind = Kind::Conv;
  std::size_t kernel = 0;    // conv only
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t out_size = 0;  // spatial side after the layer
};

/// Conv/pool schedule reducing an H x H patch to 1 x 1. Stage s uses
/// channels * 2^s filters (capped at 8 * channels), 5x5 kernels in the first
/// stage when H >= 32 and 3x3 otherwise. A stage runs at least two convs and
/// pools once the even extent halves to an odd size <= 5 or to >= 8; a final
/// conv then collapses the remaining odd extent. H = 64 with 32 channels
/// reproduces the reference table (64-60-56-28-26-24-12-10-8-6-3-1).
/// Throws ConfigError when no such schedule exists for H.
std::vector<ConvLayerSpec> conv_schedule(std::size_t H, std::size_t channels);

template <typename T>
struct SubModuleWeights {
  std::vector<Parameter<T>*> conv_kernels;  // one per conv layer, [O x C x K x K]
  std::vector<Parameter<T>*> conv_biases;
  Parameter<T>* dense1_w = nullptr;  // [d_model x final_channels]
  Parameter<T>* dense1_b = nullptr;
  Parameter<T>* dense2_w = nullptr;  // [d_model x d_model]
  Parameter<T>* dense2_b = nullptr;

  std::vector<Parameter<T>*> all() const;
};

/// k architecturally identical CNN sub-modules with independent weights.
template <typename T>
class FeatureExtractor {
 public:
  FeatureExtractor(const ExtractorConfig& config, ParameterStore<T>& store, const std::string& prefix = "extractor");

  void init(Rng& rng);
  const ExtractorConfig& config() const { return config_; }
  const std::vector<ConvLayerSpec>& schedule() const { return schedule_; }
  std::size_t final_channels() const { return final_channels_; }
  const SubModuleWeights<T>& sub_module(std::size_t j) const { return subs_[j]; }

  /// FV of sub-module j for one [3 x H x H] patch -> [d_model].
  Tensor<T> extract_fv(std::size_t j, const Tensor<T>& patch) const;
  /// Flattened conv-stack output (the 1 x 1 map before the dense head).
  Tensor<T> conv_features(std::size_t j, const Tensor<T>& patch) const;
  /// [P x k x d_model]; entry [p][j] = FV of sub-module j on patch p.
  Tensor<T> extract_mfv(const std::vector<Tensor<T>>& patches) const;
  /// Same values as a single tape node shaped [P*k x d_model] (row p*k + j).
  ad::Var<T> extract_mfv(ad::Tape<T>& tape, const std::vector<Tensor<T>>& patches) const;

  struct Cache;

 private:
  Tensor<T> forward(std::size_t j, const Tensor<T>& patch, Cache* cache) const;
  void backward(std::size_t j, const Cache& cache, const T* grad_out, std::vector<Tensor<T>>& grads) const;
  void check_patch(const Tensor<T>& patch) const;

  ExtractorConfig config_;
  std::vector<ConvLayerSpec> schedule_;
  std::size_t final_channels_ = 0;
  std::vector<SubModuleWeights<T>> subs_;
};

extern template class FeatureExtractor<float>;
extern template class FeatureExtractor<double>;

}  // namespace hindsight
