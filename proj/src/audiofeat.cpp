#include "stepsmith/audiofeat.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <mutex>
#include <numbers>

#include <fftw3.h>
#include <fmt/format.h>

#include "stepsmith/error.hpp"

namespace stepsmith {

namespace {

// FFTW planning is not thread-safe; execution is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

// One real-to-complex 4096-point transform with the three Hann windows.
class FrameTransformer {
 public:
  FrameTransformer()
      : input_(fftw_alloc_real(kFftSize)), output_(fftw_alloc_complex(kFftBins)) {
    {
      const std::lock_guard lock(planner_mutex());
      plan_ = fftw_plan_dft_r2c_1d(kFftSize, input_.get(), output_.get(), FFTW_ESTIMATE);
    }
    for (int c = 0; c < kStftChannels; ++c) {
      const int n = kWindowSizes[c];
      auto& w = windows_[static_cast<std::size_t>(c)];
      w.resize(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) {
        w[static_cast<std::size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
      }
    }
  }
  ~FrameTransformer() {
    const std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan_);
  }
  FrameTransformer(const FrameTransformer&) = delete;
  FrameTransformer& operator=(const FrameTransformer&) = delete;

  // Magnitudes of frame `frame`, channel `channel`, written with stride `stride`.
  void transform(const std::vector<float>& samples, std::size_t frame, int channel, float* out,
                 std::size_t stride) {
    const int n = kWindowSizes[channel];
    const auto& w = windows_[static_cast<std::size_t>(channel)];
    const auto center = static_cast<std::ptrdiff_t>(frame * kHopSamples);
    const std::ptrdiff_t begin = center - n / 2;
    double* in = input_.get();
    for (int i = 0; i < n; ++i) {
      const std::ptrdiff_t s = begin + i;
      const double x = (s >= 0 && s < static_cast<std::ptrdiff_t>(samples.size()))
                           ? static_cast<double>(samples[static_cast<std::size_t>(s)])
                           : 0.0;
      in[i] = x * w[static_cast<std::size_t>(i)];
    }
    std::fill(in + n, in + kFftSize, 0.0);
    fftw_execute(plan_);
    const fftw_complex* spec = output_.get();
    for (int k = 0; k < kFftBins; ++k) {
      out[static_cast<std::size_t>(k) * stride] =
          static_cast<float>(std::hypot(spec[k][0], spec[k][1]));
    }
  }

 private:
  struct RealFree {
    void operator()(double* p) const { fftw_free(p); }
  };
  struct ComplexFree {
    void operator()(fftw_complex* p) const { fftw_free(p); }
  };
  std::unique_ptr<double, RealFree> input_;
  std::unique_ptr<fftw_complex, ComplexFree> output_;
  fftw_plan plan_ = nullptr;
  std::array<std::vector<double>, kStftChannels> windows_;
};

void check_clip(const AudioClip& clip) {
  if (clip.sample_rate != kSampleRate) {
    throw DataError(fmt::format("expected {} Hz audio, got {} Hz", kSampleRate, clip.sample_rate));
  }
  if (clip.samples.size() < static_cast<std::size_t>(kHopSamples)) {
    throw DataError(fmt::format("clip of {} samples is shorter than one hop", clip.samples.size()));
  }
}

// Neumaier-compensated running sum.
struct CompensatedSum {
  double sum = 0.0;
  double comp = 0.0;
  void add(double x) {
    const double t = sum + x;
    if (std::abs(sum) >= std::abs(x)) {
      comp += (sum - t) + x;
    } else {
      comp += (x - t) + sum;
    }
    sum = t;
  }
  double value() const { return sum + comp; }
};

}  // namespace

std::size_t frame_count(std::size_t samples) { return samples / kHopSamples + 1; }

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

StftMagnitudes multiwindow_stft(const AudioClip& clip) {
  check_clip(clip);
  FrameTransformer fft;
  StftMagnitudes out;
  out.frames = frame_count(clip.samples.size());
  out.data.assign(out.frames * kFftBins * kStftChannels, 0.0f);
  for (std::size_t t = 0; t < out.frames; ++t) {
    for (int c = 0; c < kStftChannels; ++c) {
      fft.transform(clip.samples, t, c, out.data.data() + t * kFftBins * kStftChannels + c,
                    kStftChannels);
    }
  }
  return out;
}

MelFilterbank::MelFilterbank(int bands, double min_hz, double max_hz) {
  if (bands < 1) throw DataError("mel filterbank needs at least one band");
  const double lo = hz_to_mel(min_hz);
  const double hi = hz_to_mel(max_hz);
  std::vector<double> edges(static_cast<std::size_t>(bands) + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / (bands + 1));
  }
  const double bin_hz = static_cast<double>(kSampleRate) / kFftSize;
  filters_.resize(static_cast<std::size_t>(bands));
  centers_.resize(static_cast<std::size_t>(bands));
  for (std::size_t b = 0; b < filters_.size(); ++b) {
    const double left = edges[b];
    const double center = edges[b + 1];
    const double right = edges[b + 2];
    centers_[b] = center;
    const int first = static_cast<int>(std::floor(left / bin_hz)) + 1;
    const int last = std::min(static_cast<int>(std::ceil(right / bin_hz)) - 1, kFftBins - 1);
    Filter& f = filters_[b];
    f.first_bin = first;
    for (int k = first; k <= last; ++k) {
      const double hz = k * bin_hz;
      double w = 0.0;
      if (hz > left && hz <= center) {
        w = (hz - left) / (center - left);
      } else if (hz > center && hz < right) {
        w = (right - hz) / (right - center);
      }
      f.weights.push_back(w);
    }
  }
}

double MelFilterbank::weight(int band, int bin) const {
  const Filter& f = filters_[static_cast<std::size_t>(band)];
  const int i = bin - f.first_bin;
  if (i < 0 || i >= static_cast<int>(f.weights.size())) return 0.0;
  return f.weights[static_cast<std::size_t>(i)];
}

double MelFilterbank::row_sum(int band) const {
  const Filter& f = filters_[static_cast<std::size_t>(band)];
  double s = 0.0;
  for (double w : f.weights) s += w;
  return s;
}

void MelFilterbank::apply(const float* spectrum, std::size_t stride, float* out,
                          std::size_t out_stride) const {
  for (std::size_t b = 0; b < filters_.size(); ++b) {
    const Filter& f = filters_[b];
    double acc = 0.0;
    for (std::size_t i = 0; i < f.weights.size(); ++i) {
      acc += f.weights[i] *
             static_cast<double>(spectrum[(static_cast<std::size_t>(f.first_bin) + i) * stride]);
    }
    out[b * out_stride] = static_cast<float>(acc);
  }
}

std::vector<float> mel_energies(const StftMagnitudes& stft, const MelFilterbank& filterbank) {
  const auto bands = static_cast<std::size_t>(filterbank.bands());
  std::vector<float> out(stft.frames * bands * kStftChannels);
  for (std::size_t t = 0; t < stft.frames; ++t) {
    for (std::size_t c = 0; c < kStftChannels; ++c) {
      filterbank.apply(stft.data.data() + t * kFftBins * kStftChannels + c, kStftChannels,
                       out.data() + t * bands * kStftChannels + c, kStftChannels);
    }
  }
  return out;
}

MelSpectrogram mel_project(const StftMagnitudes& stft, int bands) {
  const MelFilterbank filterbank(bands);
  MelSpectrogram spec;
  spec.frames = stft.frames;
  spec.bands = static_cast<std::size_t>(bands);
  spec.band_centers = filterbank.centers_hz();
  spec.data = mel_energies(stft, filterbank);
  for (float& v : spec.data) v = static_cast<float>(std::log(static_cast<double>(v) + kLogFloor));
  return spec;
}

MelSpectrogram mel_spectrogram(const AudioClip& clip, int bands) {
  check_clip(clip);
  const MelFilterbank filterbank(bands);
  FrameTransformer fft;
  MelSpectrogram spec;
  spec.frames = frame_count(clip.samples.size());
  spec.bands = static_cast<std::size_t>(bands);
  spec.band_centers = filterbank.centers_hz();
  spec.data.resize(spec.frames * spec.bands * kStftChannels);
  std::vector<float> magnitudes(kFftBins);
  for (std::size_t t = 0; t < spec.frames; ++t) {
    for (int c = 0; c < kStftChannels; ++c) {
      fft.transform(clip.samples, t, c, magnitudes.data(), 1);
      filterbank.apply(magnitudes.data(), 1,
                       spec.data.data() + t * spec.frame_stride() + static_cast<std::size_t>(c),
                       kStftChannels);
    }
  }
  for (float& v : spec.data) v = static_cast<float>(std::log(static_cast<double>(v) + kLogFloor));
  return spec;
}

NormalizationStats fit_normalization(std::span<const MelSpectrogram> spectrograms) {
  if (spectrograms.empty()) throw DataError("cannot fit normalization on an empty corpus");
  const std::size_t bands = spectrograms.front().bands;
  const std::size_t cells = bands * kStftChannels;
  std::vector<CompensatedSum> sums(cells);
  std::size_t count = 0;
  for (const MelSpectrogram& s : spectrograms) {
    if (s.bands != bands) throw DataError("spectrograms disagree on band count");
    for (std::size_t t = 0; t < s.frames; ++t) {
      for (std::size_t i = 0; i < cells; ++i) sums[i].add(s.data[t * cells + i]);
    }
    count += s.frames;
  }
  if (count == 0) throw DataError("cannot fit normalization on zero frames");
  NormalizationStats stats;
  stats.bands = bands;
  stats.mean.resize(cells);
  stats.std.resize(cells);
  for (std::size_t i = 0; i < cells; ++i) stats.mean[i] = sums[i].value() / count;
  std::vector<CompensatedSum> sq(cells);
  for (const MelSpectrogram& s : spectrograms) {
    for (std::size_t t = 0; t < s.frames; ++t) {
      for (std::size_t i = 0; i < cells; ++i) {
        const double d = s.data[t * cells + i] - stats.mean[i];
        sq[i].add(d * d);
      }
    }
  }
  for (std::size_t i = 0; i < cells; ++i) {
    stats.std[i] = std::max(std::sqrt(sq[i].value() / count), kStdFloor);
  }
  return stats;
}

MelSpectrogram apply_normalization(const MelSpectrogram& spec, const NormalizationStats& stats) {
  const std::size_t cells = spec.bands * kStftChannels;
  if (spec.bands != stats.bands || stats.mean.size() != cells || stats.std.size() != cells) {
    throw DataError(fmt::format("normalization stats for {} bands applied to {} bands",
                                stats.bands, spec.bands));
  }
  MelSpectrogram out = spec;
  for (std::size_t t = 0; t < spec.frames; ++t) {
    for (std::size_t i = 0; i < cells; ++i) {
      const double x = spec.data[t * cells + i];
      out.data[t * cells + i] = static_cast<float>((x - stats.mean[i]) / stats.std[i]);
    }
  }
  return out;
}

}  // namespace stepsmith
