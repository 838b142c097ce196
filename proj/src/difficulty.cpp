#include <cmath>

#include <fmt/format.h>

#include "stepsmith/error.hpp"
#include "stepsmith/pipeline.hpp"

namespace stepsmith {

int default_difficulty(double bpm, double length_minutes) {
  if (!(bpm > 0.0) || !(length_minutes > 0.0)) {
    throw DataError(fmt::format("difficulty needs positive tempo and length (got {} BPM, {} min)",
                                bpm, length_minutes));
  }
  const double raw = std::floor(bpm / 10.0) - (4.0 - std::log2(length_minutes));
  return std::max(5, static_cast<int>(std::lround(raw)));
}

DifficultyPlan plan_difficulties(int d, const std::vector<int>& overrides) {
  static constexpr CoarseDifficulty kOrder[5] = {
      CoarseDifficulty::Challenge, CoarseDifficulty::Hard, CoarseDifficulty::Medium,
      CoarseDifficulty::Easy, CoarseDifficulty::Beginner};
  DifficultyPlan plan;
  if (!overrides.empty()) {
    if (overrides.size() != 5) {
      throw UsageError(fmt::format("difficulty overrides need exactly 5 values, got {}",
                                   overrides.size()));
    }
    for (std::size_t i = 0; i < 5; ++i) {
      if (overrides[i] < 1) throw UsageError("difficulty overrides must be at least 1");
      plan.emplace_back(kOrder[i], overrides[i]);
    }
    return plan;
  }
  if (d < 5) throw UsageError(fmt::format("difficulty {} leaves no room for five charts", d));
  for (int i = 0; i < 5; ++i) plan.emplace_back(kOrder[i], d - i);
  return plan;
}

}  // namespace stepsmith
