#pragma once

// DDPT tensor container: "DDPT", version 0x01, rank (u8), rank x u32 LE
// extents, then the elements as binary32 LE in row-major order.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "ddp/tensor.hpp"

namespace ddp {

inline constexpr std::uint8_t kDdptVersion = 0x01;

std::vector<std::uint8_t> encode_ddpt(const DenseTensor& t);
DenseTensor decode_ddpt(std::span<const std::uint8_t> bytes);

DenseTensor read_ddpt(const std::filesystem::path& path);
void write_ddpt(const std::filesystem::path& path, const DenseTensor& t);

}  // namespace ddp
