#ifndef TIE_CHECKPOINT_HPP
#define TIE_CHECKPOINT_HPP

#include "tie/tensor.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace tie {

// Layout, all integers little-endian:
//   "TIE1" | u32 version | u64 header length | UTF-8 JSON header |
//   f64 payload of every tensor in manifest order | u32 CRC-32 of the payload
// The header carries a "tensors" manifest of {name, dtype, dims, offset},
// offsets counted in bytes from the start of the payload.

inline constexpr std::uint32_t checkpoint_version = 1;

struct NamedTensor {
  std::string name;
  Shape dims;
  Matrix value;
};

struct CheckpointFile {
  nlohmann::json header;  // without the manifest
  std::vector<NamedTensor> tensors;

  const NamedTensor& tensor(const std::string& name) const;
  bool contains(const std::string& name) const;
};

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string serialize_checkpoint(const CheckpointFile& file);
CheckpointFile parse_checkpoint(const std::string& bytes);

void write_checkpoint(const std::filesystem::path& path, const CheckpointFile& file);
/// Throws CheckpointError for a missing file, bad magic, unknown version,
/// truncation or CRC mismatch.
CheckpointFile read_checkpoint(const std::filesystem::path& path);

}  // namespace tie

#endif  // TIE_CHECKPOINT_HPP
