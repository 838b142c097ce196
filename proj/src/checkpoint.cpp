#include "stepsmith/neural/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <thread>
#include <iterator>
#include <limits>

#include <fmt/format.h>
#include <zlib.h>

#include "stepsmith/error.hpp"

namespace stepsmith::nn {

namespace {

constexpr char kMagic[4] = {'D', 'D', 'C', 'L'};

void put_u8(std::vector<unsigned char>& out, std::uint8_t v) { out.push_back(v); }

void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xFF));
  out.push_back(static_cast<unsigned char>(v >> 8));
}

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::span<const unsigned char> bytes) : bytes_(bytes) {}

  const unsigned char* take(std::size_t n) {
    if (n > bytes_.size() - pos_) throw DataError("weights file is truncated");
    const unsigned char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint8_t u8() { return *take(1); }
  std::uint16_t u16() {
    const unsigned char* p = take(2);
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
  }
  std::uint32_t u32() {
    const unsigned char* p = take(4);
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const unsigned char> bytes_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32_of(std::span<const unsigned char> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large buffers in pieces.
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const std::size_t n = std::min<std::size_t>(bytes.size() - pos, 1U << 30);
    crc = crc32(crc, bytes.data() + pos, static_cast<uInt>(n));
    pos += n;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::vector<unsigned char> encode_weights(const NamedTensors& tensors) {
  std::vector<unsigned char> out(kMagic, kMagic + 4);
  put_u32(out, kWeightsVersion);
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (name.empty() || name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw DataError(fmt::format("invalid tensor name '{}'", name));
    }
    if (t.rank() > std::numeric_limits<std::uint8_t>::max()) {
      throw DataError(fmt::format("tensor '{}' has too many dimensions", name));
    }
    put_u16(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u8(out, static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) {
      if (d > std::numeric_limits<std::uint32_t>::max()) {
        throw DataError(fmt::format("tensor '{}' dimension too large", name));
      }
      put_u32(out, static_cast<std::uint32_t>(d));
    }
    for (float v : t.storage()) {
      std::uint32_t bits = 0;
      std::memcpy(&bits, &v, sizeof bits);
      put_u32(out, bits);
    }
  }
  put_u32(out, crc32_of(out));
  return out;
}

NamedTensors decode_weights(std::span<const unsigned char> bytes) {
  if (bytes.size() < 16) throw DataError("weights file is truncated");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw DataError("not a weights file (bad magic)");
  const auto body = bytes.first(bytes.size() - 4);
  Reader trailer(bytes.last(4));
  if (trailer.u32() != crc32_of(body)) throw DataError("weights file checksum mismatch");
  Reader in(body);
  in.take(4);
  const std::uint32_t version = in.u32();
  if (version != kWeightsVersion) {
    throw DataError(fmt::format("unsupported weights format version {}", version));
  }
  const std::uint32_t count = in.u32();
  NamedTensors out;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::uint16_t len = in.u16();
    const unsigned char* p = in.take(len);
    std::string name(reinterpret_cast<const char*>(p), len);
    const std::uint8_t rank = in.u8();
    Shape shape(rank);
    for (auto& d : shape) d = in.u32();
    const std::size_t n = shape_size(shape);
    if (n > in.remaining() / 4) throw DataError("weights file is truncated");
    std::vector<float> values(n);
    for (float& v : values) {
      const std::uint32_t bits = in.u32();
      std::memcpy(&v, &bits, sizeof v);
    }
    if (!out.emplace(name, Tensor<float>(std::move(shape), std::move(values))).second) {
      throw DataError(fmt::format("duplicate tensor name '{}' in weights file", name));
    }
  }
  if (in.remaining() != 0) throw DataError("trailing bytes in weights file");
  return out;
}

std::vector<unsigned char> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open '{}'", path));
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::string& path, std::span<const unsigned char> bytes) {
  // Per-thread temporary name so concurrent writers of the same file never collide.
  const std::string tmp =
      fmt::format("{}.{:x}.tmp", path, std::hash<std::thread::id>{}(std::this_thread::get_id()));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError(fmt::format("cannot write '{}'", path));
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError(fmt::format("failed writing '{}'", path));
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw DataError(fmt::format("cannot move '{}' into place: {}", path, ec.message()));
}

void save_weights(const NamedTensors& tensors, const std::string& path) {
  write_file_bytes(path, encode_weights(tensors));
}

NamedTensors load_weights(const std::string& path) {
  try {
    return decode_weights(read_file_bytes(path));
  } catch (const DataError& e) {
    throw DataError(fmt::format("{}: {}", path, e.what()));
  }
}

}  // namespace stepsmith::nn
