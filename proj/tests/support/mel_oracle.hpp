#pragma once

#include <cmath>

#include "stepsmith/audiofeat.hpp"

namespace stepsmith::fixture {

// HTK mel, written out independently of the library.
inline double mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double inv_mel(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

// Hz at triangle point k (0 = lower edge of band 0) for an evenly spaced mel axis.
inline double mel_point(int k, int bands) {
  const double lo = mel(kMelMinHz);
  const double hi = mel(kMelMaxHz);
  return inv_mel(lo + (hi - lo) * k / (bands + 1));
}

inline int expected_band(double hz, int bands) {
  int best = 0;
  double best_d = 1e300;
  for (int b = 0; b < bands; ++b) {
    const double d = std::abs(mel(mel_point(b + 1, bands)) - mel(hz));
    if (d < best_d) {
      best_d = d;
      best = b;
    }
  }
  return best;
}

inline std::size_t argmax_band(const MelSpectrogram& spec, std::size_t frame, std::size_t channel) {
  std::size_t best = 0;
  for (std::size_t b = 1; b < spec.bands; ++b) {
    if (spec.at(frame, b, channel) > spec.at(frame, best, channel)) best = b;
  }
  return best;
}

}  // namespace stepsmith::fixture
