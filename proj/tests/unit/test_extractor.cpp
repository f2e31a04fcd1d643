// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "../common/naive.hpp"
#include "hindsight/extractor.hpp"

using namespace hindsight;

namespace {

std::vector<Tensor<float>> random_patches(std::size_t n, std::size_t H, Rng& rng) {
  std::vector<Tensor<float>> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(naive::random<float>({3, H, H}, rng, 0.0, 1.0));
  return out;
}

}  // namespace

TEST_CASE("reference schedule for 64x64 patches") {
  const auto s = conv_schedule(64, 32);
  std::vector<std::size_t> sizes;
  for (const auto& l : s) sizes.push_back(l.out_size);
  CHECK(sizes == std::vector<std::size_t>{60, 56, 28, 26, 24, 12, 10, 8, 6, 3, 1});
  CHECK(s.front().kernel == 5);
  CHECK(s.back().out_channels == 256);
  CHECK(s.back().out_size == 1);
}

TEST_CASE("schedules reach 1x1 for the supported patch sizes") {
  for (std::size_t H : {8, 16, 32, 64, 128}) {
    const auto s = conv_schedule(H, 4);
    CHECK(s.back().out_size == 1);
    std::size_t size = H, channels = 3;
    for (const auto& l : s) {
      CHECK(l.in_channels == channels);
      size = l.kind == ConvLayerSpec::Kind::Pool ? size / 2 : size - l.kernel + 1;
      CHECK(l.out_size == size);
      channels = l.out_channels;
    }
  }
}

TEST_CASE("conv features for H=64 end as 1x1x256") {
  ParameterStore<float> store;
  FeatureExtractor<float> fx({1, 64, 16, 32}, store);
  Rng rng(1);
  fx.init(rng);
  CHECK(fx.final_channels() == 256);
  CHECK(fx.conv_features(0, random_patches(1, 64, rng)[0]).size() == 256);
}

TEST_CASE("zero weights give a zero feature vector") {
  ParameterStore<float> store;
  FeatureExtractor<float> fx({2, 16, 8, 4}, store);
  Rng rng(2);
  const Tensor<float> fv = fx.extract_fv(1, random_patches(1, 16, rng)[0]);
  CHECK(fv == Tensor<float>(Shape{8}));
}

TEST_CASE("extraction is deterministic and shaped P x k x d") {
  ParameterStore<float> store;
  FeatureExtractor<float> fx({3, 16, 64, 4}, store);
  Rng rng(3);
  fx.init(rng);
  const auto patches = random_patches(21, 16, rng);
  const Tensor<float> a = fx.extract_mfv(patches), b = fx.extract_mfv(patches);
  CHECK(a.shape() == Shape{21, 3, 64});
  CHECK(a == b);
  CHECK(fx.extract_fv(2, patches[4]) == fx.extract_fv(2, patches[4]));

  ad::Tape<float> tape(false);
  const auto node = fx.extract_mfv(tape, patches);
  CHECK(node.shape() == Shape{63, 64});
  CHECK(node.value().vec() == a.vec());
}

TEST_CASE("k=1 rows equal the single sub-module output") {
  ParameterStore<float> store;
  FeatureExtractor<float> fx({1, 16, 8, 4}, store);
  Rng rng(4);
  fx.init(rng);
  const auto patches = random_patches(3, 16, rng);
  const Tensor<float> mfv = fx.extract_mfv(patches);
  for (std::size_t p = 0; p < 3; ++p) {
    const Tensor<float> fv = fx.extract_fv(0, patches[p]);
    for (std::size_t i = 0; i < 8; ++i) CHECK(mfv[p * 8 + i] == fv[i]);
  }
}

TEST_CASE("sub-modules with identical weights give identical rows") {
  ParameterStore<float> store;
  FeatureExtractor<float> fx({2, 16, 8, 4}, store);
  Rng rng(5);
  fx.init(rng);
  const auto w0 = fx.sub_module(0).all(), w1 = fx.sub_module(1).all();
  REQUIRE(w0.size() == w1.size());
  for (std::size_t i = 0; i < w0.size(); ++i) w1[i]->value = w0[i]->value;
  const Tensor<float> mfv = fx.extract_mfv(random_patches(4, 16, rng));
  for (std::size_t p = 0; p < 4; ++p)
    for (std::size_t i = 0; i < 8; ++i) CHECK(mfv[(p * 2) * 8 + i] == mfv[(p * 2 + 1) * 8 + i]);
}

TEST_CASE("sub-modules have independent parameters") {
  ParameterStore<float> store;
  FeatureExtractor<float> fx({3, 16, 8, 4}, store);
  Rng rng(6);
  fx.init(rng);
  CHECK(fx.sub_module(0).conv_kernels[0]->value != fx.sub_module(1).conv_kernels[0]->value);
  CHECK(fx.sub_module(0).conv_kernels[0] != fx.sub_module(2).conv_kernels[0]);
}

TEST_CASE("extractor rejects malformed patches") {
  ParameterStore<float> store;
  FeatureExtractor<float> fx({1, 16, 8, 4}, store);
  CHECK_THROWS_AS(fx.extract_fv(0, Tensor<float>(Shape{3, 8, 8})), DimensionError);
  CHECK_THROWS_AS(conv_schedule(0, 4), ConfigError);
}

TEST_CASE("perturbing one sub-module changes only its rows") {
  ParameterStore<float> store;
  FeatureExtractor<float> fx({3, 16, 8, 4}, store);
  Rng rng(7);
  fx.init(rng);
  const auto patches = random_patches(3, 16, rng);
  const Tensor<float> before = fx.extract_mfv(patches);
  for (auto* p : fx.sub_module(1).all())
    for (auto& v : p->value.vec()) v += 0.05f;
  const Tensor<float> after = fx.extract_mfv(patches);
  for (std::size_t p = 0; p < 3; ++p) {
    for (std::size_t j = 0; j < 3; ++j) {
      bool same = true;
      for (std::size_t i = 0; i < 8; ++i) same &= before[(p * 3 + j) * 8 + i] == after[(p * 3 + j) * 8 + i];
      CHECK(same == (j != 1));
    }
  }
}

TEST_CASE("translation sensitivity of the conv features") {
  ParameterStore<float> store;
  FeatureExtractor<float> fx({1, 32, 8, 8}, store);
  Rng rng(8);
  fx.init(rng);
  Tensor<float> patch(Shape{3, 32, 32}, 0.5f);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 8; y < 24; ++y)
      for (std::size_t x = 8; x < 24; ++x) patch[(c * 32 + y) * 32 + x] = static_cast<float>(rng.uniform());
  Tensor<float> shifted(patch.shape());
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 32; ++y)
      for (std::size_t x = 0; x < 32; ++x) shifted[(c * 32 + y) * 32 + (x + 2) % 32] = patch[(c * 32 + y) * 32 + x];
  const Tensor<float> a = fx.conv_features(0, patch), b = fx.conv_features(0, shifted);
  double diff = 0, norm = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    norm += a[i] * a[i];
  }
  const double rel = norm > 0 ? std::sqrt(diff / norm) : 0.0;
  MESSAGE("relative change of the 1x1 conv feature under a 2-pixel shift: " << rel);
  CHECK(std::isfinite(rel));
}
