#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "stepsmith/neural/layers.hpp"
#include "stepsmith/random.hpp"

namespace stepsmith::nn {

struct GradCheckOptions {
  double h = 1e-4;
  std::size_t max_coords = 64;
  // Relative error is |a - n| / max(|a|, |n|, floor); the floor keeps coordinates with
  // vanishing gradients from turning rounding noise into large relative errors.
  double floor = 1e-6;
  std::uint64_t seed = 1234;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coords = 0;
  std::string worst_param;
};

// Compares reverse-mode gradients of the scalar `loss` with central differences.
// Coordinates are drawn round-robin over the parameters so every tensor is probed.
// `loss` must be deterministic: run it in eval mode (no dropout sampling).
inline GradCheckResult grad_check(const std::function<Var<double>()>& loss,
                                  const std::vector<std::pair<std::string, Var<double>>>& params,
                                  const GradCheckOptions& options = {}) {
  for (const auto& [_, p] : params) p->ensure_grad().fill(0.0);
  backward(loss());
  GradCheckResult result;
  if (params.empty()) return result;
  Rng rng(options.seed);
  std::size_t total = 0;
  for (const auto& [_, p] : params) total += p->size();
  const std::size_t coords = std::min(options.max_coords, total);
  for (std::size_t k = 0; k < coords; ++k) {
    const auto& [name, p] = params[k % params.size()];
    const std::size_t i = rng.index(p->size());
    const double saved = p->value[i];
    double plus = 0.0;
    double minus = 0.0;
    {
      NoGradGuard guard;
      p->value[i] = saved + options.h;
      plus = loss()->value[0];
      p->value[i] = saved - options.h;
      minus = loss()->value[0];
      p->value[i] = saved;
    }
    const double numeric = (plus - minus) / (2.0 * options.h);
    const double analytic = p->grad[i];
    const double denom = std::max({std::abs(analytic), std::abs(numeric), options.floor});
    const double rel = std::abs(analytic - numeric) / denom;
    if (rel > result.max_rel_error) {
      result.max_rel_error = rel;
      result.worst_param = name;
    }
    ++result.coords;
  }
  return result;
}

}  // namespace stepsmith::nn
