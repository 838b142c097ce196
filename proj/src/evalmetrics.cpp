#include "stepsmith/evalmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "stepsmith/error.hpp"

namespace stepsmith {

namespace {

void check_lengths(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw DataError(fmt::format("{}: {} predictions for {} targets", what, a, b));
}

Prf prf_from_counts(double tp, double predicted, double actual) {
  Prf r;
  r.precision = predicted > 0 ? tp / predicted : 0.0;
  r.recall = actual > 0 ? tp / actual : 0.0;
  const double s = r.precision + r.recall;
  r.f1 = s > 0 ? 2.0 * r.precision * r.recall / s : 0.0;
  return r;
}

// Distinct thresholds in descending order with the cumulative (tp, predicted) counts
// of p >= threshold.
struct SweepPoint {
  double threshold;
  double tp;
  double predicted;
};

std::vector<SweepPoint> sweep(std::span<const double> probs, std::span<const int> targets) {
  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  std::vector<SweepPoint> out;
  double tp = 0.0;
  double predicted = 0.0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const std::size_t i = order[k];
    tp += targets[i] ? 1.0 : 0.0;
    predicted += 1.0;
    if (k + 1 == order.size() || probs[order[k + 1]] != probs[i]) {
      out.push_back({probs[i], tp, predicted});
    }
  }
  return out;
}

std::string format_value(double v) { return fmt::format("{:.17g}", v); }

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

Prf prf_at_threshold(std::span<const double> probs, std::span<const int> targets, double threshold) {
  check_lengths(probs.size(), targets.size(), "prf_at_threshold");
  double tp = 0.0, predicted = 0.0, actual = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const bool pos = probs[i] >= threshold;
    predicted += pos;
    actual += targets[i] != 0;
    tp += pos && targets[i] != 0;
  }
  return prf_from_counts(tp, predicted, actual);
}

ThresholdChoice max_f1_threshold(std::span<const double> probs, std::span<const int> targets) {
  check_lengths(probs.size(), targets.size(), "max_f1_threshold");
  const double actual = static_cast<double>(std::count_if(
      targets.begin(), targets.end(), [](int t) { return t != 0; }));
  ThresholdChoice best{0.5, prf_at_threshold(probs, targets, 0.5)};
  for (const SweepPoint& p : sweep(probs, targets)) {
    const Prf r = prf_from_counts(p.tp, p.predicted, actual);
    if (r.f1 > best.prf.f1 || (r.f1 == best.prf.f1 && p.threshold > best.threshold)) {
      best = {p.threshold, r};
    }
  }
  return best;
}

std::optional<double> pr_auc(std::span<const double> probs, std::span<const int> targets) {
  check_lengths(probs.size(), targets.size(), "pr_auc");
  const double actual = static_cast<double>(std::count_if(
      targets.begin(), targets.end(), [](int t) { return t != 0; }));
  if (actual == 0.0) return std::nullopt;
  const auto points = sweep(probs, targets);
  double area = 0.0;
  double prev_recall = 0.0;
  double prev_precision = points.front().tp / points.front().predicted;
  for (const SweepPoint& p : points) {
    const double recall = p.tp / actual;
    const double precision = p.tp / p.predicted;
    area += (recall - prev_recall) * (precision + prev_precision) / 2.0;
    prev_recall = recall;
    prev_precision = precision;
  }
  return area;
}

PlacementEval evaluate_placement(std::span<const double> probs, std::span<const int> targets) {
  check_lengths(probs.size(), targets.size(), "evaluate_placement");
  PlacementEval e;
  e.at_half = prf_at_threshold(probs, targets, 0.5);
  e.best = max_f1_threshold(probs, targets);
  e.prauc = pr_auc(probs, targets);
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(probs[i], 1e-7, 1.0 - 1e-7);
    total -= targets[i] ? std::log(p) : std::log(1.0 - p);
  }
  e.loss = probs.empty() ? 0.0 : total / static_cast<double>(probs.size());
  return e;
}

SelectionEval selection_scores(std::span<const int> predictions, std::span<const int> targets,
                               std::span<const double> target_probs) {
  check_lengths(predictions.size(), targets.size(), "selection_scores");
  if (!target_probs.empty()) check_lengths(target_probs.size(), targets.size(), "selection_scores");
  SelectionEval e;
  std::size_t correct = 0, holds = 0, holds_ok = 0, steps = 0, steps_ok = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] < 0 || targets[i] >= kSymbolCount) {
      throw DataError(fmt::format("selection target {} is not a step symbol", targets[i]));
    }
    const bool ok = predictions[i] == targets[i];
    correct += ok;
    const StepSymbol s = StepSymbol::from_index(targets[i]);
    if (s.has(Arrow::HoldStart)) {
      ++holds;
      holds_ok += ok;
    }
    if (!s.empty() && !s.has(Arrow::HoldStart) && !s.has(Arrow::Release)) {
      ++steps;
      steps_ok += ok;
    }
  }
  const auto n = static_cast<double>(targets.size());
  e.accuracy = targets.empty() ? 0.0 : static_cast<double>(correct) / n;
  if (holds) e.hold_accuracy = static_cast<double>(holds_ok) / static_cast<double>(holds);
  if (steps) e.step_accuracy = static_cast<double>(steps_ok) / static_cast<double>(steps);
  if (!target_probs.empty()) {
    double total = 0.0;
    for (double p : target_probs) total -= std::log(std::max(p, 1e-7));
    e.loss = total / n;
  }
  return e;
}

MetricMap metric_map(const PlacementEval& e) {
  return {
      {"f1", e.at_half.f1},
      {"precision", e.at_half.precision},
      {"recall", e.at_half.recall},
      {"max_f1", e.best.prf.f1},
      {"max_precision", e.best.prf.precision},
      {"max_recall", e.best.prf.recall},
      {"max_threshold", e.best.threshold},
      {"pr_auc", e.prauc},
      {"loss", e.loss},
  };
}

MetricMap metric_map(const SelectionEval& e) {
  return {
      {"loss", e.loss},
      {"accuracy", e.accuracy},
      {"hold_accuracy", e.hold_accuracy},
      {"step_accuracy", e.step_accuracy},
  };
}

MetricMap average_over_charts(const std::vector<ChartMetrics>& charts) {
  std::map<std::string, std::pair<double, std::size_t>> acc;
  for (const ChartMetrics& c : charts) {
    for (const auto& [name, value] : c.metrics) {
      auto& slot = acc[name];
      if (value) {
        slot.first += *value;
        ++slot.second;
      }
    }
  }
  MetricMap out;
  for (const auto& [name, s] : acc) {
    out[name] = s.second ? std::optional<double>(s.first / static_cast<double>(s.second))
                         : std::nullopt;
  }
  return out;
}

std::vector<ReportRow> difficulty_report(const std::vector<ChartMetrics>& charts,
                                         DifficultyGrouping grouping) {
  std::map<std::string, std::map<int, std::pair<double, std::size_t>>> acc;
  for (const ChartMetrics& c : charts) {
    const int key = grouping == DifficultyGrouping::Fine ? c.fine : static_cast<int>(c.coarse);
    for (const auto& [name, value] : c.metrics) {
      if (!value) continue;
      auto& slot = acc[name][key];
      slot.first += *value;
      ++slot.second;
    }
  }
  std::vector<ReportRow> rows;
  for (const auto& [name, groups] : acc) {
    for (const auto& [key, s] : groups) {
      const std::string label =
          grouping == DifficultyGrouping::Fine
              ? std::to_string(key)
              : std::string(to_string(static_cast<CoarseDifficulty>(key)));
      rows.push_back({name, label, s.first / static_cast<double>(s.second)});
    }
  }
  return rows;
}

std::string metrics_csv(const std::vector<ChartMetrics>& charts) {
  std::string out = "chart_id,difficulty_fine,difficulty_coarse,metric,value\n";
  for (const ChartMetrics& c : charts) {
    for (const auto& [name, value] : c.metrics) {
      out += fmt::format("{},{},{},{},{}\n", csv_field(c.chart_id), c.fine, to_string(c.coarse), name,
                         value ? format_value(*value) : std::string());
    }
  }
  return out;
}

std::string report_csv(const std::vector<ReportRow>& rows) {
  std::string out = "metric,difficulty,value\n";
  for (const ReportRow& r : rows) {
    out += fmt::format("{},{},{}\n", r.metric, r.difficulty, format_value(r.value));
  }
  return out;
}

}  // namespace stepsmith
