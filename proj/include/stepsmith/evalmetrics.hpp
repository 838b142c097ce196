#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stepsmith/simfile.hpp"

namespace stepsmith {

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Predictions with p >= threshold count as positive. Empty denominators give 0.
Prf prf_at_threshold(std::span<const double> probs, std::span<const int> targets, double threshold);

struct ThresholdChoice {
  double threshold = 0.5;
  Prf prf;
};

// Best f1 over thresholds drawn from the distinct probabilities plus 0.5; ties go to
// the larger threshold.
ThresholdChoice max_f1_threshold(std::span<const double> probs, std::span<const int> targets);

// Trapezoidal area under the precision-recall curve traced over all distinct
// thresholds, starting from (recall 0, first precision). Empty without positives.
std::optional<double> pr_auc(std::span<const double> probs, std::span<const int> targets);

struct PlacementEval {
  Prf at_half;
  ThresholdChoice best;
  std::optional<double> prauc;
  double loss = 0.0;  // mean BCE with the 1e-7 clamp
};

PlacementEval evaluate_placement(std::span<const double> probs, std::span<const int> targets);

struct SelectionEval {
  std::optional<double> loss;  // mean -log p(target); empty when no distributions given
  double accuracy = 0.0;
  std::optional<double> hold_accuracy;  // rows whose target holds a hold-start
  std::optional<double> step_accuracy;  // rows whose target is taps only
};

// `target_probs[i]`, when given, is the probability the model assigned to targets[i].
SelectionEval selection_scores(std::span<const int> predictions, std::span<const int> targets,
                               std::span<const double> target_probs = {});

using MetricMap = std::map<std::string, std::optional<double>>;

MetricMap metric_map(const PlacementEval& e);
MetricMap metric_map(const SelectionEval& e);

struct ChartMetrics {
  std::string chart_id;
  int fine = 1;
  CoarseDifficulty coarse = CoarseDifficulty::Beginner;
  MetricMap metrics;
};

// Unweighted mean of each metric over the charts that define it.
MetricMap average_over_charts(const std::vector<ChartMetrics>& charts);

enum class DifficultyGrouping { Fine, Coarse };

struct ReportRow {
  std::string metric;
  std::string difficulty;
  double value = 0.0;
};

// Per-difficulty unweighted means, ordered by metric then difficulty (ascending fine
// value, or Beginner..Challenge).
std::vector<ReportRow> difficulty_report(const std::vector<ChartMetrics>& charts,
                                         DifficultyGrouping grouping);

// CSV with columns chart_id, difficulty_fine, difficulty_coarse, metric, value.
std::string metrics_csv(const std::vector<ChartMetrics>& charts);
// CSV with columns metric, difficulty, value.
std::string report_csv(const std::vector<ReportRow>& rows);

}  // namespace stepsmith
