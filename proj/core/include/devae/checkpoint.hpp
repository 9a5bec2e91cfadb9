#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "devae/tensor.hpp"

namespace devae::models {

inline constexpr char kCheckpointMagic[] = {'D', 'E', 'V', 'A', 'E', '\x01'};

/// On-disk layout:
///   6 bytes  "DEVAE\x01"
///   u64 LE   header length, then that many bytes of key=value text
///   per tensor: u32 LE rank, rank x u64 LE extents, f64 LE values
/// The header says how many tensors follow.
struct Checkpoint {
  std::string header;
  std::vector<Tensor> tensors;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace devae::models
