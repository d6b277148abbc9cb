#pragma once

#include "somnonet/nn/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace somnonet::nn {

// SNWT layout, little-endian:
//   "SNWT" | version u16 | count u32 |
//   count x (name_len u16 | name bytes | rank u8 | dims u32 x rank | f32 payload)
// Tensors are written in lexicographic name order.

inline constexpr std::uint16_t kSnwtVersion = 1;

struct StoredTensor {
    Shape shape;
    std::vector<float> values;

    bool operator==(const StoredTensor&) const = default;
};

using TensorMap = std::map<std::string, StoredTensor>;

std::vector<std::byte> encode_snwt(const TensorMap& tensors);
TensorMap decode_snwt(std::span<const std::byte> bytes);

void write_snwt(const TensorMap& tensors, const std::filesystem::path& path);
TensorMap read_snwt(const std::filesystem::path& path);

} // namespace somnonet::nn
