// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "../common/naive.hpp"
#include "hindsight/gradcheck.hpp"
#include "hindsight/pos_encoder.hpp"

using namespace hindsight;

namespace {

std::vector<PatchMeta> grid_meta(int k) {
  return static_grid(synthetic_image(32, 1), k, 8).meta;
}

}  // namespace

TEST_CASE("encoding split is d/4, d/4, d/2") {
  const EncodingSplit s = encoding_split(64);
  CHECK(s.x == 16);
  CHECK(s.y == 16);
  CHECK(s.area == 32);
  CHECK_THROWS_AS(EncoderConfig({EncodingVariant::Periodic, 6, 10.0}).validate(), ConfigError);
}

TEST_CASE("periodic encoding examples") {
  const Tensor<double> zero = periodic_encoding(PatchMeta{0.0, 0.0, 0.0, 1}, 16, 10.0);
  for (std::size_t i = 0; i < 16; i += 2) {
    CHECK(zero[i] == 0.0);
    CHECK(zero[i + 1] == 1.0);
  }
  const PatchMeta m{0.3, -0.7, 0.2, 2};
  for (double lambda : {1.0, 10.0, 1e4}) {
    const Tensor<double> ev = periodic_encoding(m, 16, lambda);
    CHECK(ev[0] == std::sin(0.3));
    CHECK(ev[1] == std::cos(0.3));
    CHECK(ev[4] == std::sin(-0.7));
    CHECK(ev[8] == std::sin(0.2));
    CHECK(ev[9] == std::cos(0.2));
  }
  const Tensor<double> ev = periodic_encoding(m, 16, 10.0);
  CHECK(ev[2] == doctest::Approx(std::sin(0.3 * std::pow(10.0, 1.0 / 16.0))).epsilon(1e-15));
}

TEST_CASE("periodic variant returns the sinusoidal table") {
  ParameterStore<double> store;
  PosScaleEncoder<double> enc({EncodingVariant::Periodic, 16, 10.0}, store);
  CHECK(enc.parameters().empty());
  const auto meta = grid_meta(2);
  ad::Tape<double> tape(false);
  const Tensor<double> ev = enc.encode(tape, meta).value();
  for (std::size_t p = 0; p < meta.size(); ++p) {
    const Tensor<double> ref = periodic_encoding(meta[p], 16, 10.0);
    for (std::size_t i = 0; i < 16; ++i) CHECK(ev.at(p, i) == ref[i]);
  }
}

TEST_CASE("zero weights give a zero encoding") {
  for (auto variant : {EncodingVariant::Trainable, EncodingVariant::TrainablePeriodic}) {
    ParameterStore<double> store;
    PosScaleEncoder<double> enc({variant, 8, 10.0}, store);
    ad::Tape<double> tape(false);
    CHECK(enc.encode(tape, grid_meta(3)).value() == Tensor<double>(Shape{21, 8}));
  }
}

TEST_CASE("identity dense layer reproduces the lambda=1 periodic encoding") {
  ParameterStore<double> store;
  PosScaleEncoder<double> enc({EncodingVariant::TrainablePeriodic, 8, 10.0}, store);
  Parameter<double>& w = *enc.parameters()[0];
  for (std::size_t i = 0; i < 8; ++i) w.value.at(i, i) = 1.0;
  const auto meta = grid_meta(3);
  ad::Tape<double> tape(false);
  const Tensor<double> ev = enc.encode(tape, meta).value();
  for (std::size_t p = 0; p < meta.size(); ++p) {
    const Tensor<double> ref = periodic_encoding(meta[p], 8, 1.0);
    for (std::size_t i = 0; i < 8; ++i) CHECK(ev.at(p, i) == ref[i]);
  }
}

TEST_CASE("trainable encodings are deterministic and distinguish patches") {
  ParameterStore<float> store;
  PosScaleEncoder<float> enc({EncodingVariant::Trainable, 16, 10.0}, store);
  Rng rng(3);
  enc.init(rng);
  const auto meta = grid_meta(2);
  ad::Tape<float> a(false), b(false);
  const Tensor<float> ea = enc.encode(a, meta).value();
  CHECK(ea == enc.encode(b, meta).value());
  for (std::size_t p = 1; p < meta.size(); ++p) {
    bool differs = false;
    for (std::size_t i = 0; i < 16; ++i) differs |= ea.at(p, i) != ea.at(0, i);
    CHECK(differs);
  }
}

TEST_CASE("trainable encoder gradients") {
  for (auto variant : {EncodingVariant::Trainable, EncodingVariant::TrainablePeriodic}) {
    ParameterStore<double> store;
    PosScaleEncoder<double> enc({variant, 8, 10.0}, store);
    Rng rng(4);
    enc.init(rng);
    for (auto* p : enc.parameters())
      for (auto& v : p->value.vec()) v += rng.uniform(-0.2, 0.2);
    const auto meta = grid_meta(3);
    const auto target = naive::random<double>({21, 8}, rng);
    ScalarFn fn = [&](ad::Tape<double>& t) { return ad::mse(enc.encode(t, meta), target); };
    const auto r = grad_check(fn, enc.parameters());
    CHECK(r.decision_flips == 0);
    CHECK(r.max_rel_error < 1e-6);
  }
}

TEST_CASE("form_ffv adds elementwise") {
  Rng rng(5);
  const auto a = naive::random<double>({3, 4}, rng), e = naive::random<double>({3, 4}, rng);
  ad::Tape<double> tape(false);
  const Tensor<double> zero(Shape{3, 4});
  CHECK(form_ffv(tape.constant(a), tape.constant(zero)).value() == a);
  CHECK(form_ffv(tape.constant(zero), tape.constant(e)).value() == e);
  const Tensor<double> f = form_ffv(tape.constant(a), tape.constant(e)).value();
  for (std::size_t i = 0; i < 12; ++i) CHECK(f[i] == a[i] + e[i]);
  CHECK_THROWS_AS(form_ffv(tape.constant(a), tape.constant(Tensor<double>(Shape{2, 4}))), DimensionError);
}

TEST_CASE("variant names round trip") {
  for (auto v : {EncodingVariant::Trainable, EncodingVariant::Periodic, EncodingVariant::TrainablePeriodic})
    CHECK(parse_encoding_variant(to_string(v)) == v);
  CHECK_THROWS_AS(parse_encoding_variant("learned"), ConfigError);
}

TEST_CASE("periodic encodings are bounded and distinct across the static grid") {
  const auto meta = static_grid(synthetic_image(64, 1), 5, 8).meta;
  std::vector<Tensor<double>> evs;
  for (const PatchMeta& m : meta) {
    evs.push_back(periodic_encoding(m, 16, 10.0));
    for (double v : evs.back().vec()) CHECK(std::abs(v) <= 1.0);
  }
  double closest = 1e300;
  for (std::size_t a = 0; a < evs.size(); ++a) {
    for (std::size_t b = a + 1; b < evs.size(); ++b) {
      double linf = 0;
      for (std::size_t i = 0; i < 16; ++i) linf = std::max(linf, std::abs(evs[a][i] - evs[b][i]));
      closest = std::min(closest, linf);
    }
  }
  CHECK(closest > 1e-6);
}
