// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "hindsight/gradcheck.hpp"
#include "hindsight/model.hpp"

namespace hindsight {

struct SuiteRow {
  std::string component;
  double tolerance = 0.0;
  GradCheckResult result;
  /// Candidate fixture that was checked, and how many earlier candidates
  /// were discarded by the screening rules.
  std::size_t fixture = 0;
  std::size_t fixtures_rejected = 0;
  /// False when every candidate was discarded; `result` then belongs to the
  /// last candidate.
  bool fixture_found = true;
  std::string rejection;  // reason the last discarded candidate was dropped
  /// Set when the checked fixture contains an element whose exact
  /// derivative is zero by softmax shift invariance (names one such
  /// element). Its relative error compares two rounding residues.
  std::string note;

  bool passed() const { return fixture_found && result.passed(tolerance); }
};

inline constexpr double kOpTolerance = 1e-6;
inline constexpr double kCompositeTolerance = 1e-5;
inline constexpr double kEndToEndTolerance = 1e-4;

/// Small model used for gradient checks: 64x64 image, k=2, H=8, d_model=16,
/// N=1 with aggregator feedback, one decoder layer.
ModelConfig desk_model_config();

struct SuiteOptions {
  ModelConfig model = desk_model_config();
  std::uint64_t seed = 0;
  std::size_t image_side = 64;
  double step = 1e-4;
  /// Candidate fixtures tried per row before the row is reported as failed.
  std::size_t max_fixtures = 8;
  bool corrupt_analytic = false;
};

/// Each differentiable op, every model component, and the full pretext
/// loss, checked in 64-bit against central differences.
///
/// Fixtures (random inputs and jittered weights) are drawn from the seed.
/// A candidate is discarded before its errors are looked at when
///  - some perturbed evaluation changes a ReLU sign or max-pool winner, or
///  - (aggregator row) a query-path weight only reaches gate units that are
///    active for all or none of a patch's feature vectors. Such a weight
///    shifts every logit of the patch equally, so its exact derivative is
///    zero and both sides of the comparison are pure rounding. The encode
///    and pretext rows work on a fixed 5-patch image where such weights
///    cannot be avoided; there the finding is reported in `note` instead.
std::vector<SuiteRow> run_gradcheck_suite(const SuiteOptions& options);

/// Randomizes every parameter of `store` around its initial value so that
/// no ReLU input sits exactly on the kink (zero biases meeting a zero
/// query would).
void jitter_parameters(ParameterStore<double>& store, Rng& rng, double amplitude = 0.2);

}  // namespace hindsight
