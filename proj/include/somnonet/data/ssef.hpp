#pragma once

#include "somnonet/data/recording.hpp"

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace somnonet::data {

// SSEF layout, little-endian:
//   "SSEF" | version u16 | sampling_rate_hz u32 | epoch_len_s u16 | n_epochs u32 |
//   16 reserved zero bytes | n_epochs x u8 labels | n_epochs x (rate*len) x f32 samples
// Rhythm annotations live in a text sidecar with the ".ann" extension:
//   epoch_index,start_sample,end_sample,tag

inline constexpr std::uint16_t kSsefVersion = 1;
inline constexpr std::size_t kSsefHeaderBytes = 32;

std::vector<std::byte> encode_ssef(const Recording& rec);
Recording decode_ssef(std::span<const std::byte> bytes);

/// Writes the binary file and, when the recording carries annotations, the sidecar.
/// A stale sidecar from an earlier write is removed when there are no annotations.
void write_ssef(const Recording& rec, const std::filesystem::path& path);
Recording read_ssef(const std::filesystem::path& path);

std::filesystem::path annotation_path(const std::filesystem::path& ssef_path);

} // namespace somnonet::data
