#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace stepsmith {

inline constexpr int kSampleRate = 44100;
inline constexpr int kHopSamples = 441;  // 10 ms at 44.1 kHz
inline constexpr int kFftSize = 4096;
inline constexpr int kFftBins = kFftSize / 2 + 1;
inline constexpr int kStftChannels = 3;
inline constexpr int kDefaultMelBands = 80;
inline constexpr double kHopSeconds = static_cast<double>(kHopSamples) / kSampleRate;
inline constexpr double kMelMinHz = 27.5;
inline constexpr double kMelMaxHz = 16000.0;
inline constexpr double kLogFloor = 1e-16;
inline constexpr double kStdFloor = 1e-6;

// Window lengths of the three STFT channels (about 23, 46 and 93 ms).
inline constexpr int kWindowSizes[kStftChannels] = {1024, 2048, 4096};

// Mono PCM audio with samples nominally in [-1, 1].
struct AudioClip {
  std::vector<float> samples;
  int sample_rate = kSampleRate;

  double duration_s() const {
    return static_cast<double>(samples.size()) / static_cast<double>(sample_rate);
  }
};

enum class WavFormat { Pcm16, Float32 };

// Reads 16-bit PCM or 32-bit float WAV (mono or stereo). Stereo is averaged, and
// anything not at 44.1 kHz is linearly resampled.
AudioClip load_wav(const std::string& path);
AudioClip decode_wav(std::span<const unsigned char> bytes);
void save_wav(const AudioClip& clip, const std::string& path, WavFormat format = WavFormat::Pcm16,
              int channels = 1);
std::vector<unsigned char> encode_wav(const AudioClip& clip, WavFormat format, int channels = 1);
// Encodes two separate channels as a stereo file.
std::vector<unsigned char> encode_wav_stereo(std::span<const float> left,
                                             std::span<const float> right, int sample_rate,
                                             WavFormat format);

// Linear-interpolation resampling; N input samples become floor((N-1)*to/from)+1.
AudioClip resample_linear(const AudioClip& clip, int target_rate);

// Frame count for a clip of `samples` samples: floor(samples / hop) + 1.
std::size_t frame_count(std::size_t samples);

// (frames, 2049 bins, 3 channels) magnitude spectra, row-major.
struct StftMagnitudes {
  std::size_t frames = 0;
  std::vector<float> data;

  float at(std::size_t frame, std::size_t bin, std::size_t channel) const {
    return data[(frame * kFftBins + bin) * kStftChannels + channel];
  }
};

StftMagnitudes multiwindow_stft(const AudioClip& clip);

// Triangular mel filters (HTK mel scale) over the shared 4096-point bin axis.
class MelFilterbank {
 public:
  explicit MelFilterbank(int bands = kDefaultMelBands, double min_hz = kMelMinHz,
                         double max_hz = kMelMaxHz);

  int bands() const { return static_cast<int>(filters_.size()); }
  const std::vector<double>& centers_hz() const { return centers_; }
  // Weight of FFT bin `bin` in band `band`.
  double weight(int band, int bin) const;
  double row_sum(int band) const;
  // Projects one channel's magnitude spectrum (strided by `stride`) into `out`.
  void apply(const float* spectrum, std::size_t stride, float* out, std::size_t out_stride) const;

 private:
  struct Filter {
    int first_bin = 0;
    std::vector<double> weights;
  };
  std::vector<Filter> filters_;
  std::vector<double> centers_;
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// (frames, bands, 3) log-mel features at a 10 ms hop.
struct MelSpectrogram {
  std::size_t frames = 0;
  std::size_t bands = kDefaultMelBands;
  std::vector<float> data;
  double hop_s = kHopSeconds;
  std::vector<double> band_centers;

  float at(std::size_t frame, std::size_t band, std::size_t channel) const {
    return data[(frame * bands + band) * kStftChannels + channel];
  }
  float& at(std::size_t frame, std::size_t band, std::size_t channel) {
    return data[(frame * bands + band) * kStftChannels + channel];
  }
  std::size_t frame_stride() const { return bands * kStftChannels; }
};

// Mel energies before the log, same layout as MelSpectrogram::data.
std::vector<float> mel_energies(const StftMagnitudes& stft, const MelFilterbank& filterbank);
MelSpectrogram mel_project(const StftMagnitudes& stft, int bands = kDefaultMelBands);
// Streams STFT frames straight into the mel projection without materializing the
// full magnitude array.
MelSpectrogram mel_spectrogram(const AudioClip& clip, int bands = kDefaultMelBands);

struct NormalizationStats {
  std::size_t bands = kDefaultMelBands;
  std::vector<double> mean;  // (bands, 3)
  std::vector<double> std;   // (bands, 3)

  friend bool operator==(const NormalizationStats&, const NormalizationStats&) = default;
};

NormalizationStats fit_normalization(std::span<const MelSpectrogram> spectrograms);
MelSpectrogram apply_normalization(const MelSpectrogram& spec, const NormalizationStats& stats);

}  // namespace stepsmith
