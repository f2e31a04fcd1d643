// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "../common/naive.hpp"
#include "hindsight/aggregator.hpp"

using namespace hindsight;

namespace {

struct Setup {
  ParameterStore<double> store;
  FeatureAggregator<double> agg;
  Setup(std::size_t k, std::size_t d, std::uint64_t seed) : agg(k, d, store) {
    Rng rng(seed);
    agg.init(rng);
    for (auto& p : store)
      for (auto& v : p->value.vec()) v += rng.uniform(-0.3, 0.3);
  }
};

}  // namespace

TEST_CASE("divergence loss examples") {
  CHECK(std::abs(divergence_loss({0.5, 0.5})) < 1e-12);
  CHECK(std::abs(divergence_loss({0.25, 0.25, 0.25, 0.25})) < 1e-12);
  CHECK(divergence_loss({0.75, 0.25}) == doctest::Approx(-0.13081).epsilon(1e-4));
  CHECK(divergence_loss({1.0, 0.0}) == doctest::Approx(-std::log(2.0)).epsilon(1e-9));
  CHECK(divergence_loss({1.0 - 1e-9, 1e-9}) == doctest::Approx(-0.69315).epsilon(1e-4));

  ad::Tape<double> tape(false);
  const auto two = tape.constant(Tensor<double>::matrix({{0.5, 0.5}, {0.75, 0.25}}));
  CHECK(ad::divergence_loss(two).value()[0] == doctest::Approx(-0.06541).epsilon(1e-4));
}

TEST_CASE("divergence loss is never positive") {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> c(2 + rng.uniform_int(5));
    double s = 0;
    for (double& v : c) s += (v = rng.uniform());
    for (double& v : c) v /= s;
    CHECK(divergence_loss(c) <= 0.0);
  }
}

TEST_CASE("gate rows sum to one and afv stays inside the feature hull") {
  Setup s(3, 8, 2);
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t P = 1 + rng.uniform_int(6);
    ad::Tape<double> tape(false);
    const auto mfv = tape.constant(naive::random<double>({P * 3, 8}, rng, -2, 2));
    const auto gq = tape.constant(naive::random<double>({P, 8}, rng));
    const auto r = s.agg.aggregate(mfv, trial % 2 ? std::optional(gq) : std::nullopt);
    CHECK(r.divergence.has_value() == (trial % 2 == 0));
    for (std::size_t p = 0; p < P; ++p) {
      double sum = 0;
      for (std::size_t j = 0; j < 3; ++j) sum += r.gate.value().at(p, j);
      CHECK(std::abs(sum - 1.0) < 1e-12);
      for (std::size_t i = 0; i < 8; ++i) {
        double lo = 1e300, hi = -1e300;
        for (std::size_t j = 0; j < 3; ++j) {
          lo = std::min(lo, mfv.value().at(p * 3 + j, i));
          hi = std::max(hi, mfv.value().at(p * 3 + j, i));
        }
        CHECK(r.afv.value().at(p, i) >= lo - 1e-12);
        CHECK(r.afv.value().at(p, i) <= hi + 1e-12);
      }
    }
  }
}

TEST_CASE("equal feature rows pass through unchanged") {
  Setup s(4, 6, 4);
  Rng rng(5);
  const auto v = naive::random<double>({1, 6}, rng);
  Tensor<double> mfv(Shape{4, 6});
  for (std::size_t j = 0; j < 4; ++j)
    for (std::size_t i = 0; i < 6; ++i) mfv.at(j, i) = v[i];
  ad::Tape<double> tape(false);
  const auto gq = tape.constant(naive::random<double>({1, 6}, rng));
  for (auto q : {std::optional(gq), std::optional<ad::Var<double>>()}) {
    const auto afv = s.agg.aggregate(tape.constant(mfv), q).afv.value();
    for (std::size_t i = 0; i < 6; ++i) CHECK(afv[i] == doctest::Approx(v[i]).epsilon(1e-12));
  }
}

TEST_CASE("zero weights give a uniform gate and the feature mean") {
  ParameterStore<double> store;
  FeatureAggregator<double> agg(2, 4, store);
  const Tensor<double> mfv = Tensor<double>::matrix({{1, 2, 3, 4}, {3, 2, 1, 0}});
  ad::Tape<double> tape(false);
  const auto r = agg.aggregate(tape.constant(mfv), std::nullopt);
  CHECK(r.gate.value() == Tensor<double>::matrix({{0.5, 0.5}}));
  CHECK(r.afv.value() == Tensor<double>::matrix({{2, 2, 2, 2}}));
  CHECK(std::abs(r.divergence->value()[0]) < 1e-12);
}

TEST_CASE("k=1 always selects the single feature vector") {
  Setup s(1, 5, 6);
  Rng rng(7);
  const auto mfv = naive::random<double>({3, 5}, rng);
  ad::Tape<double> tape(false);
  const auto r = s.agg.aggregate(tape.constant(mfv), std::nullopt);
  for (std::size_t p = 0; p < 3; ++p) CHECK(r.gate.value()[p] == 1.0);
  CHECK(r.afv.value() == mfv);
}

TEST_CASE("batched aggregation matches per-patch calls") {
  Setup s(3, 6, 8);
  Rng rng(9);
  const auto mfv = naive::random<double>({4 * 3, 6}, rng);
  const auto gq = naive::random<double>({4, 6}, rng);
  ad::Tape<double> tape(false);
  const auto all = s.agg.aggregate(tape.constant(mfv), tape.constant(gq)).afv.value();
  for (std::size_t p = 0; p < 4; ++p) {
    Tensor<double> m(Shape{3, 6}), q(Shape{1, 6});
    for (std::size_t i = 0; i < 18; ++i) m[i] = mfv[p * 18 + i];
    for (std::size_t i = 0; i < 6; ++i) q[i] = gq[p * 6 + i];
    const auto one = s.agg.aggregate(tape.constant(m), tape.constant(q)).afv.value();
    for (std::size_t i = 0; i < 6; ++i) CHECK(one[i] == all[p * 6 + i]);
  }
}

TEST_CASE("identical patches give identical aggregated vectors") {
  Setup s(2, 4, 10);
  Rng rng(11);
  const auto one = naive::random<double>({2, 4}, rng);
  Tensor<double> mfv(Shape{6, 4});
  for (std::size_t p = 0; p < 3; ++p)
    for (std::size_t i = 0; i < 8; ++i) mfv[p * 8 + i] = one[i];
  ad::Tape<double> tape(false);
  const auto afv = s.agg.aggregate(tape.constant(mfv), std::nullopt).afv.value();
  for (std::size_t p = 1; p < 3; ++p)
    for (std::size_t i = 0; i < 4; ++i) CHECK(afv.at(p, i) == afv.at(0, i));
}

TEST_CASE("shared logit offsets leave the gate unchanged") {
  Setup s(3, 4, 12);
  Rng rng(13);
  const auto mfv = naive::random<double>({3, 4}, rng);
  ad::Tape<double> tape(false);
  const auto logits = s.agg.gate_logits(tape.constant(mfv), std::nullopt).value();
  const auto gate = s.agg.aggregate(tape.constant(mfv), std::nullopt).gate.value();
  Tensor<double> shifted = logits;
  for (auto& v : shifted.vec()) v += 3.7;
  const auto again = ad::softmax_rows(tape.constant(shifted)).value();
  for (std::size_t j = 0; j < 3; ++j) CHECK(again[j] == doctest::Approx(gate[j]).epsilon(1e-12));
}
