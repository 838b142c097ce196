#include <cstring>
#include <filesystem>

#include <fmt/format.h>
#include <openssl/evp.h>
#include <zlib.h>

#include "stepsmith/error.hpp"
#include "stepsmith/neural/checkpoint.hpp"
#include "stepsmith/pipeline.hpp"

namespace stepsmith {

namespace {

constexpr char kMagic[4] = {'D', 'D', 'C', 'F'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHashHexLength = 64;

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint32_t checksum(std::span<const unsigned char> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const std::size_t n = std::min<std::size_t>(bytes.size() - pos, 1U << 30);
    crc = crc32(crc, bytes.data() + pos, static_cast<uInt>(n));
    pos += n;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::string sha256_hex(std::span<const unsigned char> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw DataError("SHA-256 computation failed");
  }
  std::string hex;
  hex.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
  return hex;
}

// Layout: "DDCF", version u32, 64-byte hex content hash, bands u32, frames u32, float32
// payload (frames, bands, 3), CRC32 trailer.
std::vector<unsigned char> encode_features(const MelSpectrogram& spec, const std::string& content_hash) {
  if (content_hash.size() != kHashHexLength) throw DataError("feature cache key must be a SHA-256 hex digest");
  std::vector<unsigned char> out(kMagic, kMagic + 4);
  put_u32(out, kVersion);
  out.insert(out.end(), content_hash.begin(), content_hash.end());
  put_u32(out, static_cast<std::uint32_t>(spec.bands));
  put_u32(out, static_cast<std::uint32_t>(spec.frames));
  for (float v : spec.data) {
    std::uint32_t bits = 0;
    std::memcpy(&bits, &v, sizeof bits);
    put_u32(out, bits);
  }
  put_u32(out, checksum(out));
  return out;
}

std::optional<MelSpectrogram> decode_features(std::span<const unsigned char> bytes,
                                              const std::string& expected_hash) {
  constexpr std::size_t header = 4 + 4 + kHashHexLength + 4 + 4;
  if (bytes.size() < header + 4) throw DataError("feature cache entry is truncated");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw DataError("feature cache entry has bad magic");
  const auto body = bytes.first(bytes.size() - 4);
  if (get_u32(bytes.data() + body.size()) != checksum(body)) {
    throw DataError("feature cache entry checksum mismatch");
  }
  if (get_u32(bytes.data() + 4) != kVersion) throw DataError("unsupported feature cache version");
  const std::string hash(reinterpret_cast<const char*>(bytes.data() + 8), kHashHexLength);
  if (hash != expected_hash) return std::nullopt;
  MelSpectrogram spec;
  spec.bands = get_u32(bytes.data() + 8 + kHashHexLength);
  spec.frames = get_u32(bytes.data() + 12 + kHashHexLength);
  const std::size_t n = spec.frames * spec.bands * kStftChannels;
  if (body.size() != header + 4 * n) throw DataError("feature cache entry has the wrong size");
  spec.data.resize(n);
  const unsigned char* p = bytes.data() + header;
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t bits = get_u32(p + 4 * i);
    std::memcpy(&spec.data[i], &bits, sizeof bits);
  }
  spec.band_centers = MelFilterbank(static_cast<int>(spec.bands)).centers_hz();
  return spec;
}

FeatureCache::FeatureCache(std::string dir) : dir_(std::move(dir)) {
  std::error_code ec;
  std::filesystem::create_directories(dir_, ec);
  if (ec) throw DataError(fmt::format("cannot create cache directory '{}': {}", dir_, ec.message()));
}

std::string FeatureCache::entry_path(const std::string& content_hash, std::size_t bands) const {
  return (std::filesystem::path(dir_) / fmt::format("{}-{}.feat", content_hash, bands)).string();
}

MelSpectrogram FeatureCache::load_or_compute(const std::string& wav_path, std::size_t bands) {
  const auto bytes = nn::read_file_bytes(wav_path);
  const std::string hash = sha256_hex(bytes);
  const std::string path = entry_path(hash, bands);
  if (std::filesystem::exists(path)) {
    try {
      auto cached = decode_features(nn::read_file_bytes(path), hash);
      if (cached && cached->bands == bands) {
        ++hits_;
        return std::move(*cached);
      }
    } catch (const DataError&) {
      // Corrupt entries are recomputed below.
    }
  }
  ++misses_;
  AudioClip clip;
  try {
    clip = decode_wav(bytes);
  } catch (const DataError& e) {
    throw DataError(fmt::format("{}: {}", wav_path, e.what()));
  }
  MelSpectrogram spec = mel_spectrogram(clip, static_cast<int>(bands));
  nn::write_file_bytes(path, encode_features(spec, hash));
  return spec;
}

}  // namespace stepsmith
