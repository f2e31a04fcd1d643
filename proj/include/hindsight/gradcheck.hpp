// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "hindsight/parameter.hpp"
#include "hindsight/tape.hpp"

namespace hindsight {

/// Builds a fresh tape and returns a scalar node. Must be deterministic.
using ScalarFn = std::function<ad::Var<double>(ad::Tape<double>&)>;

struct GradCheckOptions {
  double step = 1e-4;  // central-difference half width; must lie in [1e-7, 1e-4]
  /// Test hook: adds 1.0 to one analytic gradient element before comparison.
  bool corrupt_analytic = false;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t elements_checked = 0;
  bool finite = true;
  std::string failure;  // non-empty when a perturbed evaluation was non-finite
  /// Perturbed evaluations whose ReLU/max-pool decisions differ from the
  /// unperturbed point. There the central difference straddles a kink and
  /// does not estimate the derivative.
  std::size_t decision_flips = 0;
  std::string first_flip_param;
  std::size_t first_flip_index = 0;

  bool passed(double tolerance) const { return finite && max_rel_error < tolerance; }
};

/// |a - n| / max(|a|, |n|, 1e-12)
double relative_error(double analytic, double numeric);

/// Compares reverse-mode gradients of `fn` against central differences
/// (fn(theta + h) - fn(theta - h)) / 2h for every element of every parameter.
GradCheckResult grad_check(const ScalarFn& fn, const std::vector<Parameter<double>*>& params,
                           const GradCheckOptions& options = {});
GradCheckResult grad_check(const ScalarFn& fn, ParameterStore<double>& params, const GradCheckOptions& options = {});

}  // namespace hindsight
