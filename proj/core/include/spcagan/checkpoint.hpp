#pragma once

#include "spcagan/common.hpp"
#include "spcagan/nn.hpp"

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace spcagan::checkpoint {

// Binary layout (little-endian):
//   8 bytes   magic "SPCACKPT"
//   u32       format version
//   u64 + n   kind string
//   u64 + n   configuration JSON text
//   u32       tensor count, then per tensor:
//             u64 + n name, u64 rows, u64 cols, rows*cols f64 (column-major)
inline constexpr std::uint32_t kVersion = 1;

struct Checkpoint {
  std::string kind;  // "gan" or "detector"
  std::string config_json;
  std::vector<std::pair<std::string, Matrix>> tensors;

  const Matrix& tensor(const std::string& name) const;
};

void save(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load(const std::filesystem::path& path);

// Appends every parameter of `net` as "<prefix>.<layer>.<kind>.<param>".
void put(Checkpoint& ckpt, const std::string& prefix, const nn::Sequential& net);
// Restores parameters written by put(); names and shapes must match.
void get(const Checkpoint& ckpt, const std::string& prefix, nn::Sequential& net);

}  // namespace spcagan::checkpoint
