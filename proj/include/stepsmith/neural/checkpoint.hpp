#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "stepsmith/neural/tensor.hpp"

namespace stepsmith::nn {

using NamedTensors = std::map<std::string, Tensor<float>>;

inline constexpr std::uint32_t kWeightsVersion = 1;

// Binary layout, little-endian: "DDCL", version u32, count u32, then per tensor a
// u16-length UTF-8 name, u8 rank, u32 dims and float32 payload; CRC32 of everything
// before it as the trailer. Tensors are written sorted by name.
std::vector<unsigned char> encode_weights(const NamedTensors& tensors);
NamedTensors decode_weights(std::span<const unsigned char> bytes);

void save_weights(const NamedTensors& tensors, const std::string& path);
NamedTensors load_weights(const std::string& path);

// Reads a file into memory, throwing DataError if it cannot be opened.
std::vector<unsigned char> read_file_bytes(const std::string& path);
// Writes via a temporary file and rename so readers never see a partial file.
void write_file_bytes(const std::string& path, std::span<const unsigned char> bytes);

}  // namespace stepsmith::nn
