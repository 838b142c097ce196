#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <set>
#include <utility>
#include <vector>

#include "stepsmith/evalmetrics.hpp"
#include "stepsmith/random.hpp"
#include "stepsmith/simfile.hpp"

// Brute-force metric implementations, written without reference to the library's.
namespace stepsmith::fixture {

struct Instance {
  std::vector<double> probs;
  std::vector<int> targets;
};

// Half the instances use coarse probabilities so that ties are common.
inline Instance random_instance(Rng& rng, int k) {
  Instance in;
  const std::size_t n = 1 + rng.index(500);
  const double rate = rng.uniform(0.0, 0.5);
  for (std::size_t i = 0; i < n; ++i) {
    double p = rng.uniform();
    if (k % 2 == 0) p = std::round(p * 20.0) / 20.0;
    in.probs.push_back(p);
    in.targets.push_back(rng.uniform() < rate ? 1 : 0);
  }
  return in;
}

inline Prf oracle_prf(const Instance& in, double threshold) {
  int tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < in.probs.size(); ++i) {
    const bool yes = in.probs[i] >= threshold;
    if (yes && in.targets[i]) ++tp;
    if (yes && !in.targets[i]) ++fp;
    if (!yes && in.targets[i]) ++fn;
  }
  Prf r;
  r.precision = tp + fp ? static_cast<double>(tp) / (tp + fp) : 0.0;
  r.recall = tp + fn ? static_cast<double>(tp) / (tp + fn) : 0.0;
  r.f1 = tp ? 2.0 * tp / (2.0 * tp + fp + fn) : 0.0;
  return r;
}

inline ThresholdChoice oracle_max_f1(const Instance& in) {
  std::set<double> candidates(in.probs.begin(), in.probs.end());
  candidates.insert(0.5);
  ThresholdChoice best{-1.0, {}};
  for (double t : candidates) {
    const Prf r = oracle_prf(in, t);
    if (best.threshold < 0.0 || r.f1 > best.prf.f1 || (r.f1 == best.prf.f1 && t > best.threshold)) {
      best = {t, r};
    }
  }
  return best;
}

inline double oracle_pr_auc(const Instance& in) {
  std::set<double, std::greater<>> thresholds(in.probs.begin(), in.probs.end());
  std::vector<std::pair<double, double>> curve;  // (recall, precision)
  for (double t : thresholds) {
    const Prf r = oracle_prf(in, t);
    curve.emplace_back(r.recall, r.precision);
  }
  double area = 0.0;
  double r0 = 0.0, p0 = curve.front().second;
  for (const auto& [r, p] : curve) {
    area += 0.5 * (r - r0) * (p + p0);
    r0 = r;
    p0 = p;
  }
  return area;
}

inline bool is_hold_row(int symbol) {
  for (char c : StepSymbol::from_index(symbol).to_string()) {
    if (c == '2') return true;
  }
  return false;
}

inline bool is_tap_row(int symbol) {
  for (char c : StepSymbol::from_index(symbol).to_string()) {
    if (c != '0' && c != '1') return false;
  }
  return symbol != 0;
}

struct SelectionOracle {
  double accuracy = 0.0;
  std::optional<double> hold_accuracy;
  std::optional<double> step_accuracy;
  double loss = 0.0;
};

inline SelectionOracle oracle_selection(const std::vector<int>& pred, const std::vector<int>& target,
                                        const std::vector<double>& probs) {
  int correct = 0, holds = 0, holds_ok = 0, taps = 0, taps_ok = 0;
  double loss = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const bool ok = pred[i] == target[i];
    correct += ok;
    if (is_hold_row(target[i])) {
      ++holds;
      holds_ok += ok;
    }
    if (is_tap_row(target[i])) {
      ++taps;
      taps_ok += ok;
    }
    loss -= std::log(probs[i]);
  }
  const auto n = static_cast<double>(target.size());
  SelectionOracle out;
  out.accuracy = correct / n;
  out.loss = loss / n;
  if (holds) out.hold_accuracy = static_cast<double>(holds_ok) / holds;
  if (taps) out.step_accuracy = static_cast<double>(taps_ok) / taps;
  return out;
}

}  // namespace stepsmith::fixture
