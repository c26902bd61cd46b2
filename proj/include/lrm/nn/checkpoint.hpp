#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lrm/nn/tensor.hpp"

namespace lrm::nn {

/// Named float32 tensor as stored on disk.
struct TensorBlock {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::vector<float> values;
};

/// Versioned parameter container.
///
/// Layout (little-endian):
///   8 bytes  magic "LRMCKPT\0"
///   u32      format version
///   u64      architecture digest
///   u32      metadata length, then metadata bytes (UTF-8 JSON)
///   u32      block count, then per block:
///            u32 name length, name bytes, u32 rank, rank x u64 dims,
///            prod(dims) x f32 payload
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::uint32_t version = kVersion;
  std::uint64_t arch_digest = 0;
  std::string metadata;
  std::vector<TensorBlock> blocks;

  const TensorBlock& block(const std::string& name) const;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(const std::string& bytes);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Appends every parameter as a block named prefix + param.name.
template <typename T>
void store_params(Checkpoint& ckpt, const ParamSet<T>& params, const std::string& prefix = "");

/// Loads every parameter from blocks named prefix + param.name; shapes must match.
template <typename T>
void load_params(const Checkpoint& ckpt, ParamSet<T>& params, const std::string& prefix = "");

}  // namespace lrm::nn
