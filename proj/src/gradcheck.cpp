// SPDX-License-Identifier: Apache-2.0
#include "hindsight/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "hindsight/kernels.hpp"

namespace hindsight {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-12});
  return std::abs(analytic - numeric) / denom;
}

namespace {

struct Evaluation {
  double value;
  std::uint64_t decisions;
};

Evaluation evaluate(const ScalarFn& fn) {
  kernels::DecisionRecorder recorder;
  ad::Tape<double> tape(false);
  const double v = fn(tape).value()[0];
  return {v, recorder.digest()};
}

}  // namespace

GradCheckResult grad_check(const ScalarFn& fn, const std::vector<Parameter<double>*>& params,
                           const GradCheckOptions& options) {
  if (!(options.step >= 1e-7 && options.step <= 1e-4)) {
    throw ConfigError("grad_check: step must lie in [1e-7, 1e-4]");
  }
  for (auto* p : params) p->grad.fill(0.0);
  std::uint64_t base_decisions = 0;
  {
    kernels::DecisionRecorder recorder;
    ad::Tape<double> tape(true);
    ad::Var<double> out = fn(tape);
    if (!out.value().all_finite()) {
      GradCheckResult r;
      r.finite = false;
      r.max_rel_error = std::numeric_limits<double>::infinity();
      r.failure = "non-finite value at the unperturbed point";
      return r;
    }
    base_decisions = recorder.digest();
    tape.backward(out);
  }
  if (options.corrupt_analytic && !params.empty() && params.front()->grad.size() > 0) {
    params.front()->grad[0] += 1.0;
  }

  GradCheckResult result;
  const double h = options.step;
  for (auto* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double saved = p->value[i];
      p->value[i] = saved + h;
      const Evaluation up = evaluate(fn);
      p->value[i] = saved - h;
      const Evaluation down = evaluate(fn);
      p->value[i] = saved;
      const double plus = up.value, minus = down.value;
      if (!std::isfinite(plus) || !std::isfinite(minus)) {
        result.finite = false;
        result.max_rel_error = std::numeric_limits<double>::infinity();
        result.failure = "non-finite value while perturbing parameter '" + p->name + "'";
        result.worst_param = p->name;
        result.worst_index = i;
        return result;
      }
      if (up.decisions != base_decisions || down.decisions != base_decisions) {
        if (result.decision_flips++ == 0) {
          result.first_flip_param = p->name;
          result.first_flip_index = i;
        }
      }
      const double numeric = (plus - minus) / (2.0 * h);
      const double analytic = p->grad[i];
      const double err = relative_error(analytic, numeric);
      ++result.elements_checked;
      if (err > result.max_rel_error || result.worst_param.empty()) {
        result.max_rel_error = std::max(err, result.max_rel_error);
        result.worst_param = p->name;
        result.worst_index = i;
        result.worst_analytic = analytic;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

GradCheckResult grad_check(const ScalarFn& fn, ParameterStore<double>& params, const GradCheckOptions& options) {
  std::vector<Parameter<double>*> ptrs;
  for (auto& p : params) ptrs.push_back(p.get());
  return grad_check(fn, ptrs, options);
}

}  // namespace hindsight
