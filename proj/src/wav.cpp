#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include <fmt/format.h>

#include "stepsmith/audiofeat.hpp"
#include "stepsmith/error.hpp"

namespace stepsmith {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xFF));
  out.push_back(static_cast<unsigned char>(v >> 8));
}

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
}

void put_tag(std::vector<unsigned char>& out, const char* tag) {
  out.insert(out.end(), tag, tag + 4);
}

void put_sample(std::vector<unsigned char>& out, float x, WavFormat format) {
  if (format == WavFormat::Pcm16) {
    const double scaled = std::round(static_cast<double>(std::clamp(x, -1.0f, 1.0f)) * 32768.0);
    const auto v = static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0));
    put_u16(out, static_cast<std::uint16_t>(v));
  } else {
    std::uint32_t bits = 0;
    std::memcpy(&bits, &x, sizeof bits);
    put_u32(out, bits);
  }
}

std::vector<unsigned char> encode(std::span<const float> left, std::span<const float> right,
                                  int channels, int sample_rate, WavFormat format) {
  const std::uint16_t bits = format == WavFormat::Pcm16 ? 16 : 32;
  const std::uint16_t block = static_cast<std::uint16_t>(channels * bits / 8);
  const auto data_bytes = static_cast<std::uint32_t>(left.size() * block);
  std::vector<unsigned char> out;
  out.reserve(44 + data_bytes);
  put_tag(out, "RIFF");
  put_u32(out, 36 + data_bytes);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put_u32(out, 16);
  put_u16(out, format == WavFormat::Pcm16 ? kFormatPcm : kFormatFloat);
  put_u16(out, static_cast<std::uint16_t>(channels));
  put_u32(out, static_cast<std::uint32_t>(sample_rate));
  put_u32(out, static_cast<std::uint32_t>(sample_rate) * block);
  put_u16(out, block);
  put_u16(out, bits);
  put_tag(out, "data");
  put_u32(out, data_bytes);
  for (std::size_t i = 0; i < left.size(); ++i) {
    put_sample(out, left[i], format);
    if (channels == 2) put_sample(out, right[i], format);
  }
  return out;
}

}  // namespace

AudioClip decode_wav(std::span<const unsigned char> bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw DataError("not a RIFF/WAVE file");
  }
  bool have_fmt = false;
  std::uint16_t format = 0;
  std::uint16_t channels = 0;
  std::uint32_t rate = 0;
  std::uint16_t bits = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t size = read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16 || body + size > bytes.size()) throw DataError("truncated WAV fmt chunk");
      const unsigned char* f = bytes.data() + body;
      format = read_u16(f);
      channels = read_u16(f + 2);
      rate = read_u32(f + 4);
      bits = read_u16(f + 14);
      if (format == kFormatExtensible) {
        if (size < 26) throw DataError("truncated WAVE_FORMAT_EXTENSIBLE header");
        format = read_u16(f + 24);
      }
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (!have_fmt) throw DataError("WAV data chunk precedes fmt chunk");
      const bool pcm16 = format == kFormatPcm && bits == 16;
      const bool f32 = format == kFormatFloat && bits == 32;
      if (!pcm16 && !f32) {
        throw DataError(fmt::format("unsupported WAV encoding (format {}, {} bits)", format, bits));
      }
      if (channels != 1 && channels != 2) {
        throw DataError(fmt::format("unsupported WAV channel count {}", channels));
      }
      if (rate == 0) throw DataError("WAV sample rate is zero");
      const std::size_t block = static_cast<std::size_t>(channels) * bits / 8;
      if (body + size > bytes.size() || size % block != 0) throw DataError("truncated WAV data");
      const std::size_t n = size / block;
      AudioClip clip;
      clip.sample_rate = static_cast<int>(rate);
      clip.samples.resize(n);
      const unsigned char* d = bytes.data() + body;
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t c = 0; c < channels; ++c) {
          const unsigned char* s = d + i * block + c * (bits / 8);
          if (pcm16) {
            acc += static_cast<double>(static_cast<std::int16_t>(read_u16(s))) / 32768.0;
          } else {
            const std::uint32_t raw = read_u32(s);
            float v = 0.0f;
            std::memcpy(&v, &raw, sizeof v);
            acc += v;
          }
        }
        clip.samples[i] = static_cast<float>(acc / channels);
      }
      if (clip.sample_rate != kSampleRate) clip = resample_linear(clip, kSampleRate);
      return clip;
    }
    pos = body + size + (size & 1U);
  }
  throw DataError(have_fmt ? "WAV file has no data chunk" : "WAV file has no fmt chunk");
}

AudioClip load_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open audio file '{}'", path));
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  try {
    return decode_wav(bytes);
  } catch (const DataError& e) {
    throw DataError(fmt::format("{}: {}", path, e.what()));
  }
}

std::vector<unsigned char> encode_wav(const AudioClip& clip, WavFormat format, int channels) {
  if (channels != 1 && channels != 2) throw DataError("WAV output supports 1 or 2 channels");
  return encode(clip.samples, clip.samples, channels, clip.sample_rate, format);
}

std::vector<unsigned char> encode_wav_stereo(std::span<const float> left,
                                             std::span<const float> right, int sample_rate,
                                             WavFormat format) {
  if (left.size() != right.size()) throw DataError("stereo channels differ in length");
  return encode(left, right, 2, sample_rate, format);
}

void save_wav(const AudioClip& clip, const std::string& path, WavFormat format, int channels) {
  const auto bytes = encode_wav(clip, format, channels);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(fmt::format("cannot write '{}'", path));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

AudioClip resample_linear(const AudioClip& clip, int target_rate) {
  if (clip.sample_rate == target_rate || clip.samples.empty()) {
    AudioClip out = clip;
    out.sample_rate = target_rate;
    return out;
  }
  const std::size_t n = clip.samples.size();
  // Integer arithmetic for the output length keeps 22050 -> 44100 exact.
  const auto m = static_cast<std::size_t>(
      (static_cast<std::uint64_t>(n - 1) * static_cast<std::uint64_t>(target_rate)) /
          static_cast<std::uint64_t>(clip.sample_rate) + 1);
  AudioClip out;
  out.sample_rate = target_rate;
  out.samples.resize(m);
  const double step = static_cast<double>(clip.sample_rate) / target_rate;
  for (std::size_t j = 0; j < m; ++j) {
    const double pos = static_cast<double>(j) * step;
    const auto i = std::min(static_cast<std::size_t>(pos), n - 1);
    const double frac = pos - static_cast<double>(i);
    const double a = clip.samples[i];
    const double b = i + 1 < n ? clip.samples[i + 1] : a;
    out.samples[j] = static_cast<float>(a + (b - a) * frac);
  }
  return out;
}

}  // namespace stepsmith
