#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "streamgate/backbone.hpp"

// Versioned binary parameter container:
//   "SGCKPT01" | u32 version | u32 stage_complete | u64 config_hash |
//   manifest (length-prefixed JSON: model config + tensor names/shapes) |
//   raw little-endian doubles in manifest order.

namespace streamgate {

struct Checkpoint {
  ModelParams params;
  int stage_complete = 0;  // 0 fresh, 1 after stage 1, 2 after stage 2
  std::uint64_t config_hash = 0;
};

void write_checkpoint(std::ostream& os, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& is);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// FNV-1a over the checkpoint parameters' raw bytes (name, shape, values).
std::uint64_t parameter_checksum(std::span<const Parameter* const> params);

}  // namespace streamgate
