#pragma once

#include <array>
#include <string>
#include <vector>

#include "stepsmith/random.hpp"
#include "stepsmith/simfile.hpp"

namespace stepsmith::fixture {

// Random chart on the 1/48-beat grid with properly paired holds.
inline Chart random_chart(Rng& rng, int max_rows = 40) {
  Chart chart;
  chart.coarse = kCoarseDifficulties[rng.index(5)];
  chart.fine = 1 + static_cast<int>(rng.index(12));
  const int n = static_cast<int>(rng.index(static_cast<std::uint64_t>(max_rows) + 1));
  std::array<bool, kColumns> held{};
  long tick = static_cast<long>(rng.index(96));
  for (int i = 0; i < n; ++i) {
    const bool last = i == n - 1;
    std::array<std::uint8_t, kColumns> digits{};
    for (int c = 0; c < kColumns; ++c) {
      auto& h = held[static_cast<std::size_t>(c)];
      if (h) {
        if (last || rng.uniform() < 0.4) {
          digits[static_cast<std::size_t>(c)] = 3;
          h = false;
        }
      } else if (!last) {
        const double u = rng.uniform();
        if (u < 0.25) {
          digits[static_cast<std::size_t>(c)] = 1;
        } else if (u < 0.32) {
          digits[static_cast<std::size_t>(c)] = 2;
          h = true;
        }
      } else if (rng.uniform() < 0.3) {
        digits[static_cast<std::size_t>(c)] = 1;
      }
    }
    if (StepSymbol(digits).empty()) {
      const auto c = static_cast<std::size_t>(rng.index(kColumns));
      digits[c] = held[c] ? 3 : 1;
      held[c] = false;
    }
    chart.rows.push_back({static_cast<double>(tick) / 48.0, StepSymbol(digits)});
    tick += 1 + static_cast<long>(rng.index(60));
  }
  // Close anything still open with one extra row.
  std::array<std::uint8_t, kColumns> close{};
  bool any = false;
  for (int c = 0; c < kColumns; ++c) {
    if (held[static_cast<std::size_t>(c)]) {
      close[static_cast<std::size_t>(c)] = 3;
      any = true;
    }
  }
  if (any) chart.rows.push_back({static_cast<double>(tick) / 48.0, StepSymbol(close)});
  return chart;
}

inline Simfile random_simfile(Rng& rng) {
  Simfile sim;
  sim.title = "song" + std::to_string(rng.index(1000));
  sim.music_path = sim.title + ".wav";
  sim.offset_s = static_cast<double>(rng.index(2000)) / 1000.0 - 0.5;
  sim.bpm_segments = {{0.0, 60.0 + static_cast<double>(rng.index(1800)) / 10.0}};
  const int extra = static_cast<int>(rng.index(3));
  double beat = 0.0;
  for (int i = 0; i < extra; ++i) {
    beat += 1.0 + static_cast<double>(rng.index(16));
    sim.bpm_segments.push_back({beat, 60.0 + static_cast<double>(rng.index(1800)) / 10.0});
  }
  const int stops = static_cast<int>(rng.index(3));
  beat = 0.0;
  for (int i = 0; i < stops; ++i) {
    beat += 0.5 + static_cast<double>(rng.index(16));
    sim.stop_segments.push_back({beat, static_cast<double>(rng.index(500)) / 1000.0});
  }
  const int charts = 1 + static_cast<int>(rng.index(4));
  for (int i = 0; i < charts; ++i) sim.charts.push_back(random_chart(rng));
  return sim;
}

}  // namespace stepsmith::fixture
