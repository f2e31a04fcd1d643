// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "hindsight/ops.hpp"
#include "hindsight/patches.hpp"

namespace hindsight {

enum class EncodingVariant { Trainable, Periodic, TrainablePeriodic };

EncodingVariant parse_encoding_variant(const std::string& s);
std::string to_string(EncodingVariant v);

struct EncoderConfig {
  EncodingVariant variant = EncodingVariant::TrainablePeriodic;
  std::size_t d_model = 64;
  /// Frequency base for the periodic variant. The trainable-periodic
  /// variant always runs its periodic stage with lambda = 1.
  double lambda = 10.0;

  void validate() const;
  double effective_lambda() const { return variant == EncodingVariant::TrainablePeriodic ? 1.0 : lambda; }
};

/// Widths allotted to (x, y, area): d/4, d/4, d/2.
struct EncodingSplit {
  std::size_t x, y, area;
};
EncodingSplit encoding_split(std::size_t d_model);

/// Sin/cos encoding of (x, y, A): for each variable with width w and
/// i in [0, w/2), entries 2i and 2i+1 are sin and cos of var * lambda^(i/d_model).
Tensor<double> periodic_encoding(const PatchMeta& meta, std::size_t d_model, double lambda);

template <typename T>
class PosScaleEncoder {
 public:
  PosScaleEncoder(const EncoderConfig& config, ParameterStore<T>& store, const std::string& prefix = "pos_encoder");

  void init(Rng& rng);
  const EncoderConfig& config() const { return config_; }
  /// Trainable: two layers (3 -> d -> d, ReLU between); trainable-periodic:
  /// one layer d -> d. Empty for the periodic variant.
  const std::vector<Parameter<T>*>& parameters() const { return params_; }

  /// Encoding vectors EV for every patch -> [P x d_model].
  ad::Var<T> encode(ad::Tape<T>& tape, const std::vector<PatchMeta>& meta) const;

 private:
  EncoderConfig config_;
  std::vector<Parameter<T>*> params_;
};

/// FFV = AFV + EV.
template <typename T>
ad::Var<T> form_ffv(ad::Var<T> afv, ad::Var<T> ev) {
  return ad::add(afv, ev);
}

extern template class PosScaleEncoder<float>;
extern template class PosScaleEncoder<double>;

}  // namespace hindsight
