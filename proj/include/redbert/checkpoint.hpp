#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "redbert/layers.hpp"

namespace redbert {

// Self-describing container: a versioned key=value header followed by named
// raw tensors.
//
//   magic "RDBTCKPT" | u32 version | u32 header bytes | header text
//   u32 tensor count | per tensor: u32 name bytes, name, u32 rank,
//   u64 dims[rank], u8 element bytes (4 or 8), raw little-endian values
//
// Headers are written in key order, so identical content gives identical
// bytes.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::map<std::string, std::string> header;
  std::vector<NamedParam> tensors;

  const Tensor& tensor(const std::string& name) const;  // throws DataError
  bool has_tensor(const std::string& name) const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(const std::string& bytes);

// Copies every tensor of params from ckpt by name (shapes must match).
void restore_params(const ParamList& params, const Checkpoint& ckpt);

}  // namespace redbert
