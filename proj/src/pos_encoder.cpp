// SPDX-License-Identifier: Apache-2.0
#include "hindsight/pos_encoder.hpp"

#include <cmath>

namespace hindsight {

EncodingVariant parse_encoding_variant(const std::string& s) {
  if (s == "trainable") return EncodingVariant::Trainable;
  if (s == "periodic") return EncodingVariant::Periodic;
  if (s == "trainable_periodic") return EncodingVariant::TrainablePeriodic;
  throw ConfigError("unknown encoder variant '" + s + "' (expected trainable|periodic|trainable_periodic)");
}

std::string to_string(EncodingVariant v) {
  switch (v) {
    case EncodingVariant::Trainable: return "trainable";
    case EncodingVariant::Periodic: return "periodic";
    case EncodingVariant::TrainablePeriodic: return "trainable_periodic";
  }
  return "?";
}

void EncoderConfig::validate() const {
  if (d_model == 0 || d_model % 4 != 0) throw ConfigError("encoder: d_model must be a positive multiple of 4");
  if (!(lambda > 0.0)) throw ConfigError("encoder: lambda must be > 0");
}

EncodingSplit encoding_split(std::size_t d_model) {
  return {d_model / 4, d_model / 4, d_model / 2};
}

Tensor<double> periodic_encoding(const PatchMeta& meta, std::size_t d_model, double lambda) {
  const EncodingSplit split = encoding_split(d_model);
  Tensor<double> ev(Shape{d_model});
  std::size_t offset = 0;
  auto encode = [&](double var, std::size_t width) {
    for (std::size_t i = 0; i < width / 2; ++i) {
      const double angle = var * std::pow(lambda, static_cast<double>(i) / static_cast<double>(d_model));
      ev[offset + 2 * i] = std::sin(angle);
      ev[offset + 2 * i + 1] = std::cos(angle);
    }
    offset += width;
  };
  encode(meta.x, split.x);
  encode(meta.y, split.y);
  encode(meta.area_coverage, split.area);
  return ev;
}

template <typename T>
PosScaleEncoder<T>::PosScaleEncoder(const EncoderConfig& config, ParameterStore<T>& store, const std::string& prefix)
    : config_(config) {
  config_.validate();
  const std::size_t d = config_.d_model;
  switch (config_.variant) {
    case EncodingVariant::Trainable:
      params_ = {&store.add(prefix + ".dense.0.weight", Shape{d, 3}), &store.add(prefix + ".dense.0.bias", Shape{d}),
                 &store.add(prefix + ".dense.1.weight", Shape{d, d}), &store.add(prefix + ".dense.1.bias", Shape{d})};
      break;
    case EncodingVariant::TrainablePeriodic:
      params_ = {&store.add(prefix + ".dense.0.weight", Shape{d, d}), &store.add(prefix + ".dense.0.bias", Shape{d})};
      break;
    case EncodingVariant::Periodic:
      break;
  }
}

template <typename T>
void PosScaleEncoder<T>::init(Rng& rng) {
  for (std::size_t i = 0; i + 1 < params_.size(); i += 2) {
    init_uniform_fan_in(params_[i]->value, params_[i]->value.dim(1), rng);
    params_[i + 1]->value.fill(T(0));
  }
}

template <typename T>
ad::Var<T> PosScaleEncoder<T>::encode(ad::Tape<T>& tape, const std::vector<PatchMeta>& meta) const {
  const std::size_t P = meta.size(), d = config_.d_model;
  if (config_.variant == EncodingVariant::Trainable) {
    Tensor<T> in(Shape{P, 3});
    for (std::size_t p = 0; p < P; ++p) {
      in[p * 3] = static_cast<T>(meta[p].x);
      in[p * 3 + 1] = static_cast<T>(meta[p].y);
      in[p * 3 + 2] = static_cast<T>(meta[p].area_coverage);
    }
    ad::Var<T> h = ad::relu(ad::linear(tape.constant(std::move(in), "meta"), tape.parameter(*params_[0]),
                                       tape.parameter(*params_[1])));
    return ad::linear(h, tape.parameter(*params_[2]), tape.parameter(*params_[3]));
  }
  Tensor<T> periodic(Shape{P, d});
  const double lambda = config_.effective_lambda();
  for (std::size_t p = 0; p < P; ++p) {
    const Tensor<double> ev = periodic_encoding(meta[p], d, lambda);
    for (std::size_t i = 0; i < d; ++i) periodic[p * d + i] = static_cast<T>(ev[i]);
  }
  ad::Var<T> base = tape.constant(std::move(periodic), "periodic_encoding");
  if (config_.variant == EncodingVariant::Periodic) return base;
  return ad::linear(base, tape.parameter(*params_[0]), tape.parameter(*params_[1]));
}

template class PosScaleEncoder<float>;
template class PosScaleEncoder<double>;

}  // namespace hindsight
