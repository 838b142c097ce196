#include "stepsmith/generation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "stepsmith/error.hpp"

namespace stepsmith {

std::vector<Placement> placements_from_probabilities(
    const std::vector<std::array<float, kSlotsPerBeat>>& probs, double threshold) {
  std::vector<Placement> out;
  for (std::size_t b = 0; b < probs.size(); ++b) {
    for (int k = 0; k < kSlotsPerBeat; ++k) {
      if (static_cast<double>(probs[b][static_cast<std::size_t>(k)]) >= threshold) {
        out.push_back({static_cast<long>(b), k});
      }
    }
  }
  return out;
}

std::vector<Placement> predict_placements(const PlacementModel<float>& model,
                                          const BeatFrames& frames, int difficulty,
                                          double threshold) {
  nn::NoGradGuard guard;
  Rng unused(0);
  std::vector<std::array<float, kSlotsPerBeat>> probs(frames.beats);
  for (std::size_t b = 0; b < frames.beats; ++b) {
    const auto ex = make_placement_example(frames, nullptr, b, difficulty, model.config().context);
    const auto p = model.forward(ex, false, unused);
    std::copy(p->value.data(), p->value.data() + kSlotsPerBeat, probs[b].begin());
  }
  return placements_from_probabilities(probs, threshold);
}

std::array<bool, kSymbolCount> valid_symbols(const std::array<bool, kColumns>& held, bool last_row) {
  std::array<bool, kSymbolCount> valid{};
  for (int s = 1; s < kSymbolCount; ++s) {
    const StepSymbol sym = StepSymbol::from_index(s);
    bool ok = true;
    for (int c = 0; c < kColumns && ok; ++c) {
      const auto d = static_cast<Arrow>(sym.digit(c));
      if (held[static_cast<std::size_t>(c)]) {
        ok = last_row ? d == Arrow::Release : (d == Arrow::None || d == Arrow::Release);
      } else {
        ok = d == Arrow::None || d == Arrow::Tap || (!last_row && d == Arrow::HoldStart);
      }
    }
    valid[static_cast<std::size_t>(s)] = ok;
  }
  return valid;
}

int choose_symbol(const std::vector<float>& logits, const std::array<bool, kSymbolCount>& valid,
                  double temperature, Rng& rng) {
  if (logits.size() != static_cast<std::size_t>(kSymbolCount)) {
    throw DataError(fmt::format("expected {} logits, got {}", kSymbolCount, logits.size()));
  }
  int best = -1;
  for (int s = 0; s < kSymbolCount; ++s) {
    if (!valid[static_cast<std::size_t>(s)]) continue;
    if (best < 0 || logits[static_cast<std::size_t>(s)] > logits[static_cast<std::size_t>(best)]) {
      best = s;
    }
  }
  if (best < 0) throw DataError("no valid step symbol to choose from");
  if (temperature <= 0.0) return best;
  const double top = logits[static_cast<std::size_t>(best)];
  std::array<double, kSymbolCount> w{};
  double total = 0.0;
  for (int s = 0; s < kSymbolCount; ++s) {
    if (!valid[static_cast<std::size_t>(s)]) continue;
    w[static_cast<std::size_t>(s)] =
        std::exp((static_cast<double>(logits[static_cast<std::size_t>(s)]) - top) / temperature);
    total += w[static_cast<std::size_t>(s)];
  }
  if (!(total > 0.0) || !std::isfinite(total)) return best;
  double u = rng.uniform() * total;
  int last_valid = best;
  for (int s = 0; s < kSymbolCount; ++s) {
    if (!valid[static_cast<std::size_t>(s)]) continue;
    last_valid = s;
    u -= w[static_cast<std::size_t>(s)];
    if (u < 0.0) return s;
  }
  return last_valid;
}

std::vector<Row> generate_steps(const SelectionModel<float>& model,
                                const std::vector<double>& beats, const MelSpectrogram& spec,
                                const BeatClock& clock, const SamplingConfig& sampling) {
  for (std::size_t i = 1; i < beats.size(); ++i) {
    if (!(beats[i] > beats[i - 1])) throw DataError("placement beats must be strictly increasing");
  }
  nn::NoGradGuard guard;
  Rng rng(sampling.seed);
  Rng unused(0);
  std::vector<int> symbols;
  std::vector<Row> rows;
  std::array<bool, kColumns> held{};
  const SelectionGeometry geometry = model.config().geometry();
  for (std::size_t i = 0; i < beats.size(); ++i) {
    const SelectionExample ex = make_selection_example(beats, symbols, i, spec, clock, geometry);
    const auto logits = model.logits(ex, false, unused);
    const auto valid = valid_symbols(held, i + 1 == beats.size());
    const int s = choose_symbol(logits->value.storage(), valid, sampling.temperature, rng);
    const StepSymbol sym = StepSymbol::from_index(s);
    for (int c = 0; c < kColumns; ++c) {
      const auto d = static_cast<Arrow>(sym.digit(c));
      if (d == Arrow::HoldStart) held[static_cast<std::size_t>(c)] = true;
      if (d == Arrow::Release) held[static_cast<std::size_t>(c)] = false;
    }
    symbols.push_back(s);
    rows.push_back({beats[i], sym});
  }
  return rows;
}

}  // namespace stepsmith
