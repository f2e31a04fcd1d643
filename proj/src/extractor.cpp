// SPDX-License-Identifier: Apache-2.0
#include "hindsight/extractor.hpp"

#include <algorithm>
#include <memory>

#include "hindsight/kernels.hpp"
#include "hindsight/parallel.hpp"

namespace hindsight {

void ExtractorConfig::validate() const {
  if (k < 1) throw ConfigError("extractor: k must be >= 1");
  if (d_model < 8) throw ConfigError("extractor: d_model must be >= 8");
  if (channels < 1) throw ConfigError("extractor: channels must be >= 1");
  conv_schedule(H, channels);
}

std::vector<ConvLayerSpec> conv_schedule(std::size_t H, std::size_t channels) {
  auto fail = [H](const std::string& why) {
    return ConfigError("extractor: patch size H=" + std::to_string(H) + " has no conv schedule (" + why + ")");
  };
  if (H < 1) throw fail("empty patch");
  const std::size_t cap = 8 * channels;
  auto pool_ready = [](std::size_t s) {
    if (s % 2 != 0 || s < 2) return false;
    const std::size_t half = s / 2;
    return (half % 2 == 1 && half <= 5) || half >= 8;
  };
  auto final_ready = [](std::size_t s) { return s % 2 == 1 && s <= 5; };

  std::vector<ConvLayerSpec> layers;
  std::size_t size = H, in = 3, stage = 0;
  while (!final_ready(size)) {
    const std::size_t kernel = (stage == 0 && size >= 32) ? 5 : 3;
    const std::size_t width = std::min(channels << stage, cap);
    std::size_t convs = 0;
    for (;;) {
      if (size < kernel) throw fail("extent " + std::to_string(size) + " below kernel " + std::to_string(kernel));
      size -= kernel - 1;
      layers.push_back({ConvLayerSpec::Kind::Conv, kernel, in, width, size});
      in = width;
      ++convs;
      if (convs < 2) continue;
      if (pool_ready(size)) {
        size /= 2;
        layers.push_back({ConvLayerSpec::Kind::Pool, 0, in, in, size});
        break;
      }
      if (final_ready(size)) break;
    }
    ++stage;
  }
  const std::size_t width = std::min(channels << stage, cap);
  layers.push_back({ConvLayerSpec::Kind::Conv, size, in, width, 1});
  return layers;
}

template <typename T>
std::vector<Parameter<T>*> SubModuleWeights<T>::all() const {
  std::vector<Parameter<T>*> out;
  for (std::size_t i = 0; i < conv_kernels.size(); ++i) {
    out.push_back(conv_kernels[i]);
    out.push_back(conv_biases[i]);
  }
  out.insert(out.end(), {dense1_w, dense1_b, dense2_w, dense2_b});
  return out;
}

template <typename T>
struct FeatureExtractor<T>::Cache {
  std::vector<Tensor<T>> acts;  // acts[i] is the input of layer i; back() is the stack output
  std::vector<std::vector<std::uint32_t>> argmax;
  Tensor<T> hidden;             // post-ReLU dense1 output
};

template <typename T>
FeatureExtractor<T>::FeatureExtractor(const ExtractorConfig& config, ParameterStore<T>& store,
                                      const std::string& prefix)
    : config_(config) {
  config_.validate();
  schedule_ = conv_schedule(config_.H, config_.channels);
  final_channels_ = schedule_.back().out_channels;
  const std::size_t d = config_.d_model;
  for (std::size_t j = 0; j < config_.k; ++j) {
    SubModuleWeights<T> w;
    const std::string base = prefix + "." + std::to_string(j);
    std::size_t conv_index = 0;
    for (const auto& layer : schedule_) {
      if (layer.kind != ConvLayerSpec::Kind::Conv) continue;
      const std::string name = base + ".conv." + std::to_string(conv_index++);
      w.conv_kernels.push_back(
          &store.add(name + ".kernel", Shape{layer.out_channels, layer.in_channels, layer.kernel, layer.kernel}));
      w.conv_biases.push_back(&store.add(name + ".bias", Shape{layer.out_channels}));
    }
    w.dense1_w = &store.add(base + ".dense.0.weight", Shape{d, final_channels_});
    w.dense1_b = &store.add(base + ".dense.0.bias", Shape{d});
    w.dense2_w = &store.add(base + ".dense.1.weight", Shape{d, d});
    w.dense2_b = &store.add(base + ".dense.1.bias", Shape{d});
    subs_.push_back(std::move(w));
  }
}

template <typename T>
void FeatureExtractor<T>::init(Rng& rng) {
  for (auto& w : subs_) {
    for (auto* k : w.conv_kernels) {
      const Shape& s = k->value.shape();
      init_uniform_fan_in(k->value, s[1] * s[2] * s[3], rng);
    }
    for (auto* b : w.conv_biases) b->value.fill(T(0));
    init_uniform_fan_in(w.dense1_w->value, final_channels_, rng);
    w.dense1_b->value.fill(T(0));
    init_uniform_fan_in(w.dense2_w->value, config_.d_model, rng);
    w.dense2_b->value.fill(T(0));
  }
}

template <typename T>
void FeatureExtractor<T>::check_patch(const Tensor<T>& patch) const {
  if (patch.shape() != Shape{3, config_.H, config_.H}) {
    throw DimensionError("extractor: expected patch [3x" + std::to_string(config_.H) + "x" +
                         std::to_string(config_.H) + "], got " + shape_str(patch.shape()));
  }
}

template <typename T>
Tensor<T> FeatureExtractor<T>::forward(std::size_t j, const Tensor<T>& patch, Cache* cache) const {
  const SubModuleWeights<T>& w = subs_[j];
  Tensor<T> x = patch;
  std::size_t conv_index = 0;
  for (const auto& layer : schedule_) {
    if (cache) cache->acts.push_back(x);
    if (layer.kind == ConvLayerSpec::Kind::Conv) {
      x = kernels::relu(kernels::conv2d_valid(x, w.conv_kernels[conv_index]->value, w.conv_biases[conv_index]->value));
      ++conv_index;
    } else {
      auto pooled = kernels::maxpool2(x);
      x = std::move(pooled.out);
      if (cache) cache->argmax.push_back(std::move(pooled.argmax));
    }
  }
  const Tensor<T> flat = x.reshaped(Shape{1, final_channels_});
  if (cache) cache->acts.push_back(flat);
  Tensor<T> hidden = kernels::relu(kernels::linear(flat, w.dense1_w->value, w.dense1_b->value));
  Tensor<T> out = kernels::linear(hidden, w.dense2_w->value, w.dense2_b->value);
  if (cache) cache->hidden = std::move(hidden);
  return out.reshaped(Shape{config_.d_model});
}

// `grads` follows SubModuleWeights::all() order.
template <typename T>
void FeatureExtractor<T>::backward(std::size_t j, const Cache& cache, const T* grad_out,
                                   std::vector<Tensor<T>>& grads) const {
  const SubModuleWeights<T>& w = subs_[j];
  const std::size_t d = config_.d_model, F = final_channels_;
  const std::size_t nconv = w.conv_kernels.size();
  Tensor<T>& g_d1w = grads[2 * nconv];
  Tensor<T>& g_d1b = grads[2 * nconv + 1];
  Tensor<T>& g_d2w = grads[2 * nconv + 2];
  Tensor<T>& g_d2b = grads[2 * nconv + 3];

  const Tensor<T>& h = cache.hidden;
  const Tensor<T>& flat = cache.acts.back();
  std::vector<T> gh(d, T(0));
  for (std::size_t o = 0; o < d; ++o) {
    const T g = grad_out[o];
    g_d2b[o] += g;
    for (std::size_t i = 0; i < d; ++i) {
      g_d2w[o * d + i] += g * h[i];
      gh[i] += g * w.dense2_w->value[o * d + i];
    }
  }
  for (std::size_t i = 0; i < d; ++i) {
    if (!(h[i] > T(0))) gh[i] = T(0);
  }
  Tensor<T> gx(Shape{F});
  for (std::size_t o = 0; o < d; ++o) {
    const T g = gh[o];
    g_d1b[o] += g;
    for (std::size_t i = 0; i < F; ++i) {
      g_d1w[o * F + i] += g * flat[i];
      gx[i] += g * w.dense1_w->value[o * F + i];
    }
  }

  std::size_t conv_index = nconv;
  std::size_t pool_index = cache.argmax.size();
  // acts[i + 1] is the output of layer i (flattened for the last layer).
  for (std::size_t li = schedule_.size(); li-- > 0;) {
    const ConvLayerSpec& layer = schedule_[li];
    const Tensor<T>& input = cache.acts[li];
    const Tensor<T>& output = cache.acts[li + 1];
    if (layer.kind == ConvLayerSpec::Kind::Conv) {
      --conv_index;
      Tensor<T> gz = gx.reshaped(Shape{layer.out_channels, layer.out_size, layer.out_size});
      for (std::size_t i = 0; i < gz.size(); ++i) {
        if (!(output[i] > T(0))) gz[i] = T(0);
      }
      Tensor<T> gin;
      if (li > 0) gin = Tensor<T>(input.shape());
      kernels::conv2d_valid_backward(input, w.conv_kernels[conv_index]->value, gz, li > 0 ? &gin : nullptr,
                                     &grads[2 * conv_index], &grads[2 * conv_index + 1]);
      gx = std::move(gin);
    } else {
      --pool_index;
      Tensor<T> gin(input.shape());
      kernels::maxpool2_backward(cache.argmax[pool_index], gx.reshaped(output.shape()), gin);
      gx = std::move(gin);
    }
  }
}

template <typename T>
Tensor<T> FeatureExtractor<T>::extract_fv(std::size_t j, const Tensor<T>& patch) const {
  check_patch(patch);
  return forward(j, patch, nullptr);
}

template <typename T>
Tensor<T> FeatureExtractor<T>::conv_features(std::size_t j, const Tensor<T>& patch) const {
  check_patch(patch);
  Cache cache;
  forward(j, patch, &cache);
  return cache.acts.back().reshaped(Shape{final_channels_});
}

template <typename T>
Tensor<T> FeatureExtractor<T>::extract_mfv(const std::vector<Tensor<T>>& patches) const {
  ad::Tape<T> tape(false);
  return extract_mfv(tape, patches).value().reshaped(Shape{patches.size(), config_.k, config_.d_model});
}

template <typename T>
ad::Var<T> FeatureExtractor<T>::extract_mfv(ad::Tape<T>& tape, const std::vector<Tensor<T>>& patches) const {
  for (const auto& p : patches) check_patch(p);
  const std::size_t P = patches.size(), k = config_.k, d = config_.d_model;
  std::vector<ad::Var<T>> param_vars;
  for (const auto& w : subs_)
    for (auto* p : w.all()) param_vars.push_back(tape.parameter(*p));
  const bool keep = tape.grad_enabled();

  auto caches = std::make_shared<std::vector<Cache>>(keep ? P * k : 0);
  Tensor<T> out(Shape{P * k, d});
  parallel_for(P * k, [&](std::size_t task) {
    const std::size_t p = task / k, j = task % k;
    Tensor<T> fv = forward(j, patches[p], keep ? &(*caches)[task] : nullptr);
    std::copy_n(fv.data(), d, out.data() + task * d);
  });

  std::vector<std::size_t> ids;
  for (const auto& v : param_vars) ids.push_back(v.id);
  return tape.record(std::move(out), param_vars, "extract_mfv", [this, caches, ids, P, k, d](ad::Tape<T>& t, const Tensor<T>& g) {
    // Fixed-size patch chunks: per-chunk gradients are reduced in chunk
    // order, so results do not depend on the thread count.
    constexpr std::size_t kChunk = 8;
    const std::size_t chunks = (P + kChunk - 1) / kChunk;
    const std::size_t per_sub = ids.size() / k;
    std::vector<std::vector<Tensor<T>>> partial(k * chunks);
    parallel_for(k * chunks, [&](std::size_t task) {
      const std::size_t j = task / chunks, c = task % chunks;
      auto& grads = partial[task];
      for (auto* p : subs_[j].all()) grads.emplace_back(p->value.shape());
      for (std::size_t p = c * kChunk; p < std::min(P, (c + 1) * kChunk); ++p) {
        backward(j, (*caches)[p * k + j], g.data() + (p * k + j) * d, grads);
      }
    });
    for (std::size_t j = 0; j < k; ++j)
      for (std::size_t c = 0; c < chunks; ++c)
        for (std::size_t q = 0; q < per_sub; ++q) {
          const std::size_t id = ids[j * per_sub + q];
          if (t.requires_grad(id)) t.grad(id).add_(partial[j * chunks + c][q]);
        }
  });
}

template struct SubModuleWeights<float>;
template struct SubModuleWeights<double>;
template class FeatureExtractor<float>;
template class FeatureExtractor<double>;

}  // namespace hindsight
