#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "piecer/autograd.hpp"

namespace piecer {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  std::size_t coordinates_checked = 0;
};

/// Compares reverse-mode gradients with central differences.
///
/// `loss_fn(Tape&) -> Var` must build a scalar loss from the given
/// parameters (via Tape::param) and be deterministic. At most
/// `samples_per_param` coordinates per parameter are probed, chosen by a
/// seeded permutation; all of them when the parameter is smaller.
/// Error per coordinate: |analytic - numeric| / max(1, |numeric|).
template <typename LossFn>
GradCheckReport grad_check(LossFn&& loss_fn, std::span<Parameter* const> params, double h, std::uint64_t seed,
                           std::size_t samples_per_param = 32) {
  if (!(h > 0.0)) throw ContractError("grad_check: step h must be positive");
  auto evaluate = [&](const Parameter* p) {
    Tape tape;
    try {
      return loss_fn(tape).value().item();
    } catch (const NonFiniteError& e) {
      throw NonFiniteError(std::string(e.what()) + " (while perturbing " + (p ? p->name : "nothing") + ")");
    }
  };

  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    Var loss = loss_fn(tape);
    tape.backward(loss);
  }
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) analytic.push_back(p->grad);

  GradCheckReport report;
  Rng rng(seed);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = *params[pi];
    std::vector<std::size_t> coords = rng.permutation(p.value.size());
    if (coords.size() > samples_per_param) coords.resize(samples_per_param);
    for (std::size_t k : coords) {
      const double saved = p.value[k];
      p.value[k] = saved + h;
      const double up = evaluate(&p);
      p.value[k] = saved - h;
      const double down = evaluate(&p);
      p.value[k] = saved;
      const double numeric = (up - down) / (2.0 * h);
      if (!std::isfinite(numeric)) {
        throw NonFiniteError("grad_check: non-finite difference quotient for " + p.name);
      }
      const double err = std::abs(analytic[pi][k] - numeric) / std::max(1.0, std::abs(numeric));
      ++report.coordinates_checked;
      if (err > report.max_rel_error || report.worst_parameter.empty()) {
        report.max_rel_error = err;
        report.worst_parameter = p.name;
        report.worst_index = k;
      }
    }
  }
  return report;
}

}  // namespace piecer
