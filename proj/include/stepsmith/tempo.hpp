#pragma once

#include <span>
#include <vector>

#include "stepsmith/audiofeat.hpp"

namespace stepsmith {

inline constexpr double kMinBpm = 60.0;
inline constexpr double kMaxBpm = 240.0;
// Octave candidates inside this band win ties.
inline constexpr double kPreferredMinBpm = 89.0;
inline constexpr double kPreferredMaxBpm = 205.0;

struct TempoEstimate {
  double bpm = 120.0;
  double offset_s = 0.0;    // time of beat 0, in [0, 60/bpm)
  double confidence = 0.0;  // fraction of envelope energy on the beat comb
};

struct TempoOptions {
  double min_bpm = kMinBpm;
  double max_bpm = kMaxBpm;
  double coarse_step = 0.05;
  double fine_step = 0.01;
  double fine_phase_step = 0.1;  // frames
  double octave_tolerance = 0.02;
  double smoothing_frames = 1.0;  // Gaussian sigma applied before comb scoring
  double min_duration_s = 4.0;
};

// Half-wave-rectified spectral flux of the (pre-log) mel energies, summed over bands
// and channels. Frame 0 is zero. Expects un-normalized log-mel input.
std::vector<double> onset_envelope(const MelSpectrogram& spec);

// Comb-filter tempo search over [min_bpm, max_bpm]. Throws NumericError when the
// envelope carries no energy and DataError when it is shorter than min_duration_s.
TempoEstimate estimate_tempo(std::span<const double> envelope, double hop_s = kHopSeconds,
                             const TempoOptions& options = {});

// Mean envelope value sampled on the comb {phase + k*period}, phase and period in frames.
double comb_score(std::span<const double> envelope, double period_frames, double phase_frames);

TempoEstimate estimate_tempo(const AudioClip& clip, const TempoOptions& options = {});

}  // namespace stepsmith
