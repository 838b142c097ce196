#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "stepsmith/beatgrid.hpp"
#include "stepsmith/models.hpp"
#include "stepsmith/simfile.hpp"

namespace stepsmith {

struct Placement {
  long beat_index = 0;
  int slot = 0;

  double beat() const { return static_cast<double>(beat_index * kSlotsPerBeat + slot) / kSlotsPerBeat; }
  friend bool operator==(const Placement&, const Placement&) = default;
};

// Every slot with probability >= threshold, in time order. No suppression window.
std::vector<Placement> placements_from_probabilities(
    const std::vector<std::array<float, kSlotsPerBeat>>& probs, double threshold);

// Runs the placement model over every beat of `frames` at the given difficulty.
std::vector<Placement> predict_placements(const PlacementModel<float>& model,
                                          const BeatFrames& frames, int difficulty,
                                          double threshold = 0.5);

struct SamplingConfig {
  double temperature = 1.0;  // 0 selects the most likely valid symbol
  std::uint64_t seed = 0;
};

// Per-symbol validity given which columns currently have an open hold. Index 0 is
// never valid; on the last row every open hold must release and none may start.
std::array<bool, kSymbolCount> valid_symbols(const std::array<bool, kColumns>& held, bool last_row);

// Picks a symbol from logits restricted to `valid`. Argmax ties go to the lowest index.
int choose_symbol(const std::vector<float>& logits, const std::array<bool, kSymbolCount>& valid,
                  double temperature, Rng& rng);

// Autoregressive selection over sorted placement beats; every row is non-empty and the
// result satisfies hold pairing.
std::vector<Row> generate_steps(const SelectionModel<float>& model,
                                const std::vector<double>& beats, const MelSpectrogram& spec,
                                const BeatClock& clock, const SamplingConfig& sampling = {});

}  // namespace stepsmith
