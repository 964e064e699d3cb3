#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lanedet/nn.hpp"

namespace lanedet {

// "LNCK" | version u32 | records until end of file. Each record:
// name length u16, name bytes, rank u8, extents u32 each, payload f64 (all
// little-endian).
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const ParameterSet& params);
ParameterSet decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::string& path, const ParameterSet& params);
ParameterSet load_checkpoint(const std::string& path);

// Copies values from `source` into `target`, requiring identical names and
// shapes for every parameter of `target`.
void assign_parameters(ParameterSet& target, const ParameterSet& source);

}  // namespace lanedet
