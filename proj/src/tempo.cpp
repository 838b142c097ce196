#include "stepsmith/tempo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "stepsmith/error.hpp"

namespace stepsmith {

namespace {

double sample_linear(std::span<const double> e, double x) {
  if (x < 0.0) return 0.0;
  const auto i = static_cast<std::size_t>(x);
  if (i >= e.size()) return 0.0;
  const double frac = x - static_cast<double>(i);
  const double b = i + 1 < e.size() ? e[i + 1] : 0.0;
  return e[i] + (b - e[i]) * frac;
}

std::vector<double> gaussian_smooth(std::span<const double> e, double sigma) {
  if (sigma <= 0.0) return {e.begin(), e.end()};
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double norm = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double w = std::exp(-0.5 * (i * i) / (sigma * sigma));
    kernel[static_cast<std::size_t>(i + radius)] = w;
    norm += w;
  }
  for (double& w : kernel) w /= norm;
  std::vector<double> out(e.size(), 0.0);
  const auto n = static_cast<std::ptrdiff_t>(e.size());
  for (std::ptrdiff_t t = 0; t < n; ++t) {
    double acc = 0.0;
    for (int i = -radius; i <= radius; ++i) {
      const std::ptrdiff_t s = t + i;
      if (s >= 0 && s < n) acc += kernel[static_cast<std::size_t>(i + radius)] * e[static_cast<std::size_t>(s)];
    }
    out[static_cast<std::size_t>(t)] = acc;
  }
  return out;
}

struct CombFit {
  double bpm = 0.0;
  double phase = 0.0;  // frames
  double score = -1.0;
};

CombFit best_phase(std::span<const double> e, double bpm, double hop_s, double phase_step) {
  const double period = 60.0 / (bpm * hop_s);
  CombFit fit{bpm, 0.0, -1.0};
  for (double phase = 0.0; phase < period; phase += phase_step) {
    const double s = comb_score(e, period, phase);
    if (s > fit.score) {
      fit.score = s;
      fit.phase = phase;
    }
  }
  return fit;
}

}  // namespace

std::vector<double> onset_envelope(const MelSpectrogram& spec) {
  std::vector<double> env(spec.frames, 0.0);
  const std::size_t stride = spec.frame_stride();
  for (std::size_t t = 1; t < spec.frames; ++t) {
    double flux = 0.0;
    for (std::size_t i = 0; i < stride; ++i) {
      const double cur = std::exp(static_cast<double>(spec.data[t * stride + i]));
      const double prev = std::exp(static_cast<double>(spec.data[(t - 1) * stride + i]));
      flux += std::max(0.0, cur - prev);
    }
    env[t] = flux;
  }
  return env;
}

double comb_score(std::span<const double> envelope, double period_frames, double phase_frames) {
  const double last = static_cast<double>(envelope.size()) - 1.0;
  double sum = 0.0;
  std::size_t count = 0;
  for (double x = phase_frames; x <= last; x += period_frames) {
    sum += sample_linear(envelope, x);
    ++count;
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

TempoEstimate estimate_tempo(std::span<const double> envelope, double hop_s,
                             const TempoOptions& options) {
  const double duration = static_cast<double>(envelope.size()) * hop_s;
  if (duration < options.min_duration_s) {
    throw DataError(fmt::format("tempo estimation needs at least {} s of audio, got {:.2f} s",
                                options.min_duration_s, duration));
  }
  double total = 0.0;
  for (double v : envelope) {
    if (!std::isfinite(v)) throw NumericError("onset envelope contains non-finite values");
    total += v;
  }
  if (!(total > 0.0)) throw NumericError("onset envelope is all zeros; no tempo to estimate");

  const std::vector<double> smooth = gaussian_smooth(envelope, options.smoothing_frames);

  // Coarse pass: integer-frame phases on a coarse BPM grid.
  const auto coarse_count = static_cast<std::size_t>(
      std::floor((options.max_bpm - options.min_bpm) / options.coarse_step + 1e-9)) + 1;
  std::vector<CombFit> coarse(coarse_count);
  for (std::size_t i = 0; i < coarse_count; ++i) {
    const double bpm = options.min_bpm + static_cast<double>(i) * options.coarse_step;
    coarse[i] = best_phase(smooth, bpm, hop_s, 1.0);
  }
  std::vector<std::size_t> peaks;
  for (std::size_t i = 0; i < coarse_count; ++i) {
    const bool left = i == 0 || coarse[i].score >= coarse[i - 1].score;
    const bool right = i + 1 == coarse_count || coarse[i].score >= coarse[i + 1].score;
    if (left && right) peaks.push_back(i);
  }
  std::stable_sort(peaks.begin(), peaks.end(),
                   [&](std::size_t a, std::size_t b) { return coarse[a].score > coarse[b].score; });
  if (peaks.size() > 8) peaks.resize(8);

  // Fine pass around each coarse peak.
  auto refine = [&](double center) {
    CombFit best;
    const int half = static_cast<int>(std::ceil(options.coarse_step / options.fine_step));
    for (int k = -half; k <= half; ++k) {
      const double bpm = center + k * options.fine_step;
      if (bpm < options.min_bpm - 1e-9 || bpm > options.max_bpm + 1e-9) continue;
      const CombFit fit = best_phase(smooth, bpm, hop_s, options.fine_phase_step);
      if (fit.score > best.score) best = fit;
    }
    return best;
  };
  CombFit best;
  for (std::size_t p : peaks) {
    const CombFit fit = refine(coarse[p].bpm);
    if (fit.score > best.score) best = fit;
  }

  // Octave policy over {b/2, b, 2b}.
  std::vector<CombFit> octaves;
  for (double factor : {0.5, 1.0, 2.0}) {
    const double bpm = best.bpm * factor;
    if (bpm < options.min_bpm - 1e-9 || bpm > options.max_bpm + 1e-9) continue;
    octaves.push_back(factor == 1.0 ? best : refine(bpm));
  }
  double top = 0.0;
  for (const CombFit& f : octaves) top = std::max(top, f.score);
  const CombFit* chosen = nullptr;
  for (const CombFit& f : octaves) {
    if (f.score < top * (1.0 - options.octave_tolerance)) continue;
    const bool preferred = f.bpm >= kPreferredMinBpm && f.bpm <= kPreferredMaxBpm;
    const bool chosen_preferred = chosen && chosen->bpm >= kPreferredMinBpm &&
                                  chosen->bpm <= kPreferredMaxBpm;
    if (!chosen || (preferred && !chosen_preferred) ||
        (preferred == chosen_preferred && f.bpm > chosen->bpm)) {
      chosen = &f;
    }
  }

  TempoEstimate est;
  est.bpm = std::round(chosen->bpm / options.fine_step) * options.fine_step;
  const double period_s = 60.0 / est.bpm;
  est.offset_s = std::fmod(chosen->phase * hop_s, period_s);
  if (est.offset_s < 0.0) est.offset_s += period_s;
  if (est.offset_s >= period_s) est.offset_s = 0.0;
  const double period_frames = 60.0 / (chosen->bpm * hop_s);
  double on_comb = 0.0;
  for (double x = chosen->phase; x <= static_cast<double>(smooth.size()) - 1.0; x += period_frames) {
    on_comb += sample_linear(smooth, x);
  }
  const double smooth_total = std::accumulate(smooth.begin(), smooth.end(), 0.0);
  est.confidence = std::clamp(on_comb / smooth_total, 0.0, 1.0);
  return est;
}

TempoEstimate estimate_tempo(const AudioClip& clip, const TempoOptions& options) {
  const MelSpectrogram spec = mel_spectrogram(clip, kDefaultMelBands);
  const std::vector<double> env = onset_envelope(spec);
  return estimate_tempo(env, spec.hop_s, options);
}

}  // namespace stepsmith
