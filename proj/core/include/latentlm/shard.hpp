#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "latentlm/sequence.hpp"

namespace latentlm::data {

inline constexpr std::uint32_t kShardVersion = 1;

/// "LLMSHARD", u32 version, u64 record count, then per record a u32 byte
/// length and the elements (u8 tag; discrete: u32 id; continuous: u32 dim and
/// that many f32), all little-endian, closed by a CRC-32 of everything before.
void write_shard(const std::string& path, const std::vector<MixedSequence>& sequences);
std::vector<MixedSequence> read_shard(const std::string& path);

std::vector<std::uint8_t> encode_shard(const std::vector<MixedSequence>& sequences);
std::vector<MixedSequence> decode_shard(const std::vector<std::uint8_t>& bytes);

}  // namespace latentlm::data
