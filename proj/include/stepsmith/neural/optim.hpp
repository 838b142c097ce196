#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <span>
#include <string>

#include <fmt/format.h>

#include "stepsmith/error.hpp"
#include "stepsmith/neural/layers.hpp"

namespace stepsmith::nn {

template <class T>
struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t step = 0;
  std::map<std::string, Tensor<T>> m;
  std::map<std::string, Tensor<T>> v;
};

// One bias-corrected Adam update from the gradients currently stored on `params`.
// Every gradient is checked before anything is modified.
template <class T>
void adam_step(AdamState<T>& state, ParameterSet<T>& params) {
  for (const auto& [name, p] : params.items()) {
    if (p->grad.size() != p->size()) continue;
    for (T g : p->grad.storage()) {
      if (!std::isfinite(g)) throw NumericError(fmt::format("non-finite gradient in '{}'", name));
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  const T b1 = static_cast<T>(state.beta1);
  const T b2 = static_cast<T>(state.beta2);
  const T step_size = static_cast<T>(state.lr / c1);
  const T root_c2 = static_cast<T>(std::sqrt(c2));
  const T eps = static_cast<T>(state.eps);
  for (auto& [name, p] : params.items()) {
    if (p->grad.size() != p->size()) continue;
    auto [mit, m_new] = state.m.try_emplace(name, p->shape(), T{0});
    auto [vit, v_new] = state.v.try_emplace(name, p->shape(), T{0});
    Tensor<T>& m = mit->second;
    Tensor<T>& v = vit->second;
    for (std::size_t i = 0; i < p->size(); ++i) {
      const T g = p->grad[i];
      m[i] = b1 * m[i] + (T{1} - b1) * g;
      v[i] = b2 * v[i] + (T{1} - b2) * g * g;
      p->value[i] -= step_size * m[i] / (std::sqrt(v[i]) / root_c2 + eps);
    }
  }
}

enum class Monitor { Minimize, Maximize };

namespace detail {
inline bool improves(double value, double best, Monitor mode) {
  return mode == Monitor::Minimize ? value < best : value > best;
}
inline double worst(Monitor mode) {
  return mode == Monitor::Minimize ? std::numeric_limits<double>::infinity()
                                   : -std::numeric_limits<double>::infinity();
}
}  // namespace detail

// Learning-rate multiplier after replaying `history`: each run of `patience`
// non-improving epochs multiplies by `factor` and restarts the count.
inline double reduce_on_plateau(std::span<const double> history, Monitor mode,
                                double factor = 0.5, std::size_t patience = 5) {
  double best = detail::worst(mode);
  double multiplier = 1.0;
  std::size_t wait = 0;
  for (double value : history) {
    if (detail::improves(value, best, mode)) {
      best = value;
      wait = 0;
    } else if (++wait >= patience) {
      multiplier *= factor;
      wait = 0;
    }
  }
  return multiplier;
}

struct EarlyStopDecision {
  bool stop = false;
  std::size_t stop_epoch = 0;  // 1-based epoch at which training ends, 0 if still running
  std::size_t best_epoch = 0;  // 1-based epoch whose weights are kept
};

// Epochs 1..warmup are never monitored. From epoch warmup+1 on, training stops once
// `patience` consecutive epochs fail to improve on the best monitored value.
// best_epoch is the best over the whole history (earliest on ties).
inline EarlyStopDecision early_stop(std::span<const double> history, Monitor mode,
                                    std::size_t warmup = 100, std::size_t patience = 20) {
  EarlyStopDecision d;
  double overall = detail::worst(mode);
  double best = detail::worst(mode);
  std::size_t wait = 0;
  for (std::size_t e = 0; e < history.size(); ++e) {
    const double value = history[e];
    if (d.best_epoch == 0 || detail::improves(value, overall, mode)) {
      overall = value;
      d.best_epoch = e + 1;
    }
    if (e + 1 <= warmup) continue;
    if (detail::improves(value, best, mode)) {
      best = value;
      wait = 0;
    } else if (++wait >= patience) {
      d.stop = true;
      d.stop_epoch = e + 1;
      return d;
    }
  }
  return d;
}

}  // namespace stepsmith::nn
