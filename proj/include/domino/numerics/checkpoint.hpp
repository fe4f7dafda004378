#pragma once

// Parameter checkpoint format (all integers little-endian):
//
//   magic      4 bytes  "DMCK"
//   version    u32      kCheckpointVersion
//   count      u32      number of records
//   record*    count times:
//     name_len u32, name bytes,
//     rank     u32, dims u32 x rank,
//     values   f32 x product(dims)
//
// Values are stored as 32-bit floats, so a ParamSet that went through
// round_to_float() survives save/load bit-exactly.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "domino/numerics/optim.hpp"

namespace domino {

inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(std::ostream& os, const ParamSet& params);
ParamSet read_checkpoint(std::istream& is);

void save_checkpoint(const std::string& path, const ParamSet& params);
ParamSet load_checkpoint(const std::string& path);

std::vector<char> checkpoint_bytes(const ParamSet& params);

// FNV-1a 64 over the checkpoint encoding; identifies a model's weights.
std::uint64_t params_hash(const ParamSet& params);
std::uint64_t fnv1a64(const void* data, std::size_t n,
                      std::uint64_t h = 0xcbf29ce484222325ULL);
std::string hash_hex(std::uint64_t h);

}  // namespace domino
