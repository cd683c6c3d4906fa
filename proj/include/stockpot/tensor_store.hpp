#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "stockpot/checkpoint.hpp"

namespace stockpot {

// Container format, bit-exact:
//   bytes 0..7    little-endian u64 H = header length
//   bytes 8..8+H  UTF-8 JSON object: tensor name -> {"dtype", "shape",
//                 "data_offsets": [begin, end]} with offsets relative to the
//                 data region, plus an optional "__metadata__" string map
//   byte 8+H..    data region, row-major little-endian values
//
// save_checkpoint always emits the canonical form: "__metadata__" first,
// tensors bytewise name-ascending, offsets packed from 0.

inline constexpr std::uint64_t kMaxHeaderBytes = 100ull * 1024 * 1024;

std::vector<std::byte> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(std::span<const std::byte> bytes);

Checkpoint load_checkpoint(const std::filesystem::path& path);

// Atomic: writes to a temporary sibling and renames into place.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);

}  // namespace stockpot
