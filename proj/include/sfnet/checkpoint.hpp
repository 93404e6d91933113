#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "sfnet/tensor.hpp"

namespace sfnet {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout: "SFAL", u32 version, then one record per parameter in name order:
// u32 name length, name bytes, u32 ndims (= 4), u32 dims[ndims], float64
// payload. All integers and floats little-endian.
std::vector<std::uint8_t> encode_checkpoint(const ParamStore& params);
ParamStore decode_checkpoint(const std::vector<std::uint8_t>& bytes,
                             const std::string& origin = "checkpoint");

void save_checkpoint(const ParamStore& params, const std::filesystem::path& path);
ParamStore load_checkpoint(const std::filesystem::path& path);

// Copies values from `source` into `target`; both must hold the same names
// and shapes. Throws ShapeError listing the first mismatch.
void assign_params(ParamStore& target, const ParamStore& source);

}  // namespace sfnet
